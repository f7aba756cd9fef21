//! Simulator checks against closed-form enumeration and sample moments.

use vcarm::simlab::{
    calibrate_beta_t, simulate_cohort, true_marginal_or, true_marginal_or_for, Estimand, SimCohortConfig, MIN_MC_DRAWS,
};

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn odds(p: f64) -> f64 {
    p / (1.0 - p)
}

/// One binary predictor `g` with P(g = 1) = 0.7 and explicit intercepts.
fn binary_predictor(outcome_coef: f64, beta_t: f64) -> SimCohortConfig {
    SimCohortConfig::from_toml_str(&format!(
        r#"
        [[columns]]
        name = "g"
        kind = "categorical"
        categories = ["0", "1"]
        probs = [0.3, 0.7]
        [treatment]
        name = "arm"
        intercept = -1.0
        [treatment.coefs]
        g = 1.5
        [[outcomes]]
        name = "y"
        intercept = -0.5
        beta_t = {beta_t}
        [outcomes.coefs]
        g = {outcome_coef}
        "#
    ))
    .unwrap()
}

/// Odds of Y(0) over odds of Y(1), enumerating the two predictor levels
/// with the given per-level weights.
fn enumerate_or(coef: f64, beta_t: f64, weight: impl Fn(usize) -> f64) -> f64 {
    let prob = [0.3, 0.7];
    let (mut p0, mut p1, mut total) = (0.0, 0.0, 0.0);
    for g in 0..2 {
        let w = prob[g] * weight(g);
        let lp = -0.5 + coef * g as f64;
        p0 += w * sigmoid(lp);
        p1 += w * sigmoid(lp + beta_t);
        total += w;
    }
    odds(p0 / total) / odds(p1 / total)
}

const N_MC: usize = 400_000;
const LOG_OR_TOL: f64 = 0.01;

#[test]
fn marginal_or_matches_enumeration_over_predictor_and_treatment_cells() {
    let (coef, beta_t) = (1.2, 0.8);
    let cfg = binary_predictor(coef, beta_t);
    let mc = true_marginal_or(&cfg, "y", N_MC, 1).unwrap();
    let exact = enumerate_or(coef, beta_t, |_| 1.0);
    assert!((mc.ln() - exact.ln()).abs() < LOG_OR_TOL, "mc {mc} exact {exact}");

    // among the treated: each level weighted by its treatment probability
    let mc_t = true_marginal_or_for(&cfg, "y", Estimand::Treated, N_MC, 1).unwrap();
    let exact_t = enumerate_or(coef, beta_t, |g| sigmoid(-1.0 + 1.5 * g as f64));
    assert!((mc_t.ln() - exact_t.ln()).abs() < LOG_OR_TOL, "mc {mc_t} exact {exact_t}");
    assert!((exact - exact_t).abs() > 1e-4);
}

#[test]
fn marginal_or_is_attenuated_toward_one() {
    // strong predictor effect: the marginal OR sits strictly between 1 and
    // the conditional OR exp(-beta_t)
    let beta_t = 1.0;
    let cfg = binary_predictor(4.0, beta_t);
    let marginal = true_marginal_or(&cfg, "y", N_MC, 2).unwrap();
    let conditional = (-beta_t).exp();
    assert!(conditional < marginal && marginal < 1.0, "conditional {conditional} marginal {marginal}");
    let exact = enumerate_or(4.0, beta_t, |_| 1.0);
    assert!(conditional < exact && exact < 1.0);
    assert!((marginal.ln() - exact.ln()).abs() < LOG_OR_TOL);
}

#[test]
fn calibration_inverts_the_oracle() {
    let cfg = binary_predictor(1.2, 0.0);
    for target in [0.6, 1.0, 1.5] {
        let beta = calibrate_beta_t(&cfg, "y", target, MIN_MC_DRAWS, 3).unwrap();
        let mut c = cfg.clone();
        c.outcome_mut("y").unwrap().beta_t = beta;
        let exact = enumerate_or(1.2, beta, |_| 1.0);
        assert!((exact.ln() - target.ln()).abs() < 0.02, "target {target} exact {exact}");
        if target == 1.0 {
            assert!(beta.abs() < 1e-6);
        }
    }
    assert!(true_marginal_or(&cfg, "y", MIN_MC_DRAWS - 1, 0).is_err());
}

#[test]
fn zero_effect_gives_identical_potential_outcomes() {
    let cfg = SimCohortConfig::cidscann_like();
    let sim = simulate_cohort(&cfg, 2_000, 4).unwrap();
    for po in &sim.potential.outcomes {
        assert_eq!(po.y0, po.y1, "{}", po.name);
        assert_eq!(po.p0, po.p1);
    }
}

#[test]
fn bundled_prevalence_is_within_three_points() {
    let cfg = SimCohortConfig::cidscann_like();
    let sim = simulate_cohort(&cfg, 20_000, 5).unwrap();
    let y0 = &sim.potential.get("sfcr").unwrap().y0;
    let rate = y0.iter().sum::<f64>() / y0.len() as f64;
    let target = 56.3 / (56.3 + 38.0);
    assert!((rate - target).abs() < 0.03, "rate {rate} target {target}");
}

fn two_normals(rho: f64) -> SimCohortConfig {
    SimCohortConfig::from_toml_str(&format!(
        r#"
        [correlation]
        exchangeable = {rho}
        [[columns]]
        name = "u"
        kind = "numeric"
        mean = 0.0
        sd = 1.0
        [[columns]]
        name = "v"
        kind = "numeric"
        mean = 10.0
        sd = 2.0
        [treatment]
        name = "arm"
        intercept = 0.0
        [[outcomes]]
        name = "y"
        intercept = 0.0
        "#
    ))
    .unwrap()
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn copula_sets_the_correlation_and_keeps_marginals() {
    for (rho, seed) in [(0.0, 6), (0.5, 7)] {
        let sim = simulate_cohort(&two_normals(rho), 20_000, seed).unwrap();
        let (u, v) = (sim.cohort.column(0), sim.cohort.column(1));
        let r = correlation(&u, &v);
        assert!((r - rho).abs() < 0.03, "rho {rho} sample {r}");
        let mean_v = v.iter().sum::<f64>() / v.len() as f64;
        let sd_v = (v.iter().map(|x| (x - mean_v).powi(2)).sum::<f64>() / v.len() as f64).sqrt();
        assert!((mean_v - 10.0).abs() < 0.05 && (sd_v - 2.0).abs() < 0.05, "{mean_v} {sd_v}");
    }
}
