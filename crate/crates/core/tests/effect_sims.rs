//! Counterfactual odds ratios and the matched comparator on simulated
//! cohorts with known effects.

use vcarm::augment::{augment_table, Origin};
use vcarm::effect::{bootstrap_ci_refit, counterfactual_predict, observed_treated, psm_match, BootstrapOptions, PsmOptions};
use vcarm::eval::cv::modeling_cohort;
use vcarm::impute::{fit_impute_features, ImputeOptions, ImputedTable};
use vcarm::learners::{fit, Algorithm, LearnerSpec};
use vcarm::pipeline::split_arms;
use vcarm::simlab::{simulate_arms, simulate_cohort, SimCohortConfig};
use vcarm::syngen::{GeneratorKind, GeneratorOptions};

fn impute() -> ImputeOptions {
    ImputeOptions {
        n_trees: 20,
        ..ImputeOptions::default()
    }
}

struct Arms {
    train: ImputedTable,
    model: vcarm::learners::TrainedModel,
    treated: vcarm::cohort::Cohort,
}

/// Logistic outcome model fitted on the imputed control arm.
fn control_model(cfg: &SimCohortConfig, n_control: usize, n_treated: usize, seed: u64) -> Arms {
    let sim = simulate_arms(cfg, n_control, n_treated, seed).unwrap();
    let arms = split_arms(sim.cohort).unwrap();
    let ctrl = modeling_cohort(&arms.controls, "sfcr").unwrap();
    let train = fit_impute_features(&ctrl, &impute(), seed + 1).unwrap();
    let model = fit(&LearnerSpec::new(Algorithm::Logistic), &train, "sfcr", seed + 2).unwrap();
    Arms {
        train,
        model,
        treated: modeling_cohort(&arms.treated, "sfcr").unwrap(),
    }
}

#[test]
fn null_effect_predictions_track_the_treated_event_rate() {
    let cfg = SimCohortConfig::cidscann_like();
    let arms = control_model(&cfg, 500, 500, 11);
    let (kept, y) = observed_treated(&arms.treated, "sfcr").unwrap();
    let p = counterfactual_predict(&arms.model, &kept, &impute(), 12).unwrap();
    let mean_p = p.iter().sum::<f64>() / p.len() as f64;
    let rate = y.iter().sum::<f64>() / y.len() as f64;
    assert!((mean_p - rate).abs() <= 0.05, "predicted {mean_p:.3} observed {rate:.3}");
}

#[test]
fn null_effect_interval_covers_one() {
    let cfg = SimCohortConfig::cidscann_like();
    let opts = BootstrapOptions {
        n_boot: 1000,
        ..BootstrapOptions::default()
    };
    let mut covered = 0;
    for run in 0..20 {
        let seed = 100 + 10 * run;
        let arms = control_model(&cfg, 350, 150, seed);
        let treated = fit_impute_features(&arms.treated, &impute(), seed + 4).unwrap();
        let spec = LearnerSpec::new(Algorithm::Logistic);
        let est = bootstrap_ci_refit(&spec, &arms.train, None, "sfcr", treated.cohort(), &opts, seed + 5).unwrap();
        covered += usize::from(est.covers(1.0));
    }
    assert!(covered >= 18, "{covered}/20");
}

/// Control-over-treated odds ratio with a Woolf interval.
fn unadjusted_or(y: &[f64], arm: &[f64]) -> (f64, f64, f64) {
    let (mut a, mut b, mut c, mut d) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for (&yi, &ti) in y.iter().zip(arm) {
        match (ti == 1.0, yi == 1.0) {
            (false, true) => a += 1.0,
            (false, false) => b += 1.0,
            (true, true) => c += 1.0,
            (true, false) => d += 1.0,
        }
    }
    let or = (a / b) / (c / d);
    let se = (1.0 / a + 1.0 / b + 1.0 / c + 1.0 / d).sqrt();
    (or, or * (-1.96 * se).exp(), or * (1.96 * se).exp())
}

#[test]
fn matched_or_agrees_with_unadjusted_or_under_randomization() {
    let mut cfg = SimCohortConfig::cidscann_like();
    cfg.treatment.coefs.clear();
    for c in &mut cfg.columns {
        c.missing = 0.0;
    }
    cfg.outcome_mut("sfcr").unwrap().missing = 0.0;
    let sim = simulate_cohort(&cfg, 1_000, 21).unwrap();
    let covariates = ["age", "pcdai_start", "perianal", "combo_im"];
    let mut cols = covariates.to_vec();
    cols.extend(["agent", "sfcr"]);
    let cohort = sim.cohort.select_columns(&cols).unwrap();
    let (_, est) = psm_match(&cohort, &covariates, "sfcr", &PsmOptions::default(), 22).unwrap();
    let (or, lo, hi) = unadjusted_or(&cohort.column(5), &cohort.column(4));
    assert!(lo <= est.or_point && est.or_point <= hi, "matched {} vs unadjusted {or} ({lo}, {hi})", est.or_point);
}

#[test]
fn augmented_table_flags_synthetic_rows() {
    let mut cfg = SimCohortConfig::cidscann_like();
    for c in &mut cfg.columns {
        c.missing = 0.0;
    }
    for o in &mut cfg.outcomes {
        o.missing = 0.0;
    }
    let sim = simulate_cohort(&cfg, 437, 31).unwrap();
    let mut names: Vec<&str> = cfg.columns.iter().map(|c| c.name.as_str()).collect();
    names.push("crp_sfcr");
    let cohort = sim.cohort.select_columns(&names).unwrap();
    let n0 = cohort.n_rows();
    assert_eq!(n0, 437);
    let table = ImputedTable::from_complete(cohort).unwrap();
    let aug = augment_table(&table, GeneratorKind::Bn, 100, &GeneratorOptions::default(), 32).unwrap();
    assert_eq!(aug.n0, 437);
    assert_eq!(aug.table.n_rows(), 537);
    assert_eq!(aug.origin.iter().filter(|&&o| o == Origin::Synthetic).count(), 100);
    assert!(aug.origin[..n0].iter().all(|&o| o == Origin::Real));
}
