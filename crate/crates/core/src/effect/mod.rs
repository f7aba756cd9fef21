//! Counterfactual prediction for the treated arm and odds-ratio effect
//! estimates with percentile bootstrap intervals.
//!
//! Odds ratios compare the virtual control arm with the observed treated
//! arm: `odds(virtual) / odds(observed)`.

pub mod psm;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::Cohort;
use crate::error::{Error, Result};
use crate::impute::{fit_impute_with, ImputeOptions, ImputedTable};
use crate::learners::{fit, LearnerSpec, TrainedModel};
use crate::stats::quantile_sorted;
use crate::{seed, subseed};

pub use psm::{match_on_propensity, psm_match, Balance, MatchedSet, PsmOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub outcome: String,
    pub learner: Option<String>,
    pub generator: Option<String>,
    #[serde(rename = "or")]
    pub or_point: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub alpha: f64,
    pub n_boot: usize,
    pub n_treated: usize,
    pub degenerate_replicates: usize,
}

impl EffectEstimate {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn covers(&self, value: f64) -> bool {
        self.ci_low <= value && value <= self.ci_high
    }
}

/// How virtual outcomes enter each bootstrap replicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VirtualOutcomes {
    /// Sum of predicted probabilities.
    #[default]
    ExpectedEvents,
    /// Bernoulli draws from the predicted probabilities, fresh per replicate.
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapOptions {
    pub n_boot: usize,
    pub alpha: f64,
    pub mode: VirtualOutcomes,
    /// Largest tolerated fraction of replicates with undefined odds.
    pub max_degenerate: f64,
    /// Whether callers holding the training table should use
    /// [`bootstrap_ci_refit`]. Resampling the treated arm alone ignores the
    /// control model's own sampling error, and its intervals undercover.
    pub refit: bool,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        BootstrapOptions {
            n_boot: 1000,
            alpha: 0.05,
            mode: VirtualOutcomes::ExpectedEvents,
            max_degenerate: 0.10,
            refit: true,
        }
    }
}

pub const MIN_BOOT: usize = 200;

fn odds(events: f64, n: f64, what: &str) -> Result<f64> {
    if events <= 0.0 || events >= n {
        return Err(Error::UndefinedOdds(format!("{what}: {events} events out of {n}")));
    }
    Ok(events / (n - events))
}

/// Expected-event odds ratio of the virtual arm against the observed arm.
pub fn odds_ratio(virtual_probs: &[f64], observed: &[f64]) -> Result<f64> {
    if virtual_probs.len() != observed.len() || observed.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "odds_ratio: {} probabilities vs {} outcomes",
            virtual_probs.len(),
            observed.len()
        )));
    }
    let n = observed.len() as f64;
    let ev: f64 = virtual_probs.iter().sum();
    let o: f64 = observed.iter().sum();
    Ok(odds(ev, n, "virtual arm")? / odds(o, n, "observed arm")?)
}

/// Control-therapy event probabilities for treated patients. Predictor
/// cells missing in `treated` are imputed from the treated rows alone.
pub fn counterfactual_predict(model: &TrainedModel, treated: &Cohort, impute: &ImputeOptions, seed: u64) -> Result<Vec<f64>> {
    if treated.n_rows() == 0 {
        return Ok(Vec::new());
    }
    let names: Vec<&str> = model.features.columns.iter().map(|c| c.name.as_str()).collect();
    let x = treated.select_columns(&names)?;
    for (spec, theirs) in model.features.columns.iter().zip(&x.schema().columns) {
        if spec != theirs {
            return Err(Error::SchemaMismatch {
                column: spec.name.clone(),
                problem: "differs from the model's training column".into(),
            });
        }
    }
    let x = if x.is_complete() {
        x
    } else {
        fit_impute_with(&x, impute, subseed!(seed, "impute-treated"))?.into_cohort()
    };
    model.predict_cohort(&x)
}

/// Treated rows with an observed `target`, as (cohort, outcome vector).
pub fn observed_treated(treated: &Cohort, target: &str) -> Result<(Cohort, Vec<f64>)> {
    let t = treated.schema().require(target)?;
    let kept = treated.select_rows(&treated.observed_rows(t));
    let y = kept.column(t);
    Ok((kept, y))
}

/// Percentile bootstrap over treated patients for a fixed set of predicted
/// probabilities and observed outcomes.
pub fn bootstrap_or(probs: &[f64], observed: &[f64], opts: &BootstrapOptions, seed: u64) -> Result<EffectEstimate> {
    if opts.n_boot < MIN_BOOT {
        return Err(Error::InvalidArgument(format!("bootstrap needs B >= {MIN_BOOT}, got {}", opts.n_boot)));
    }
    let or_point = odds_ratio(probs, observed)?;
    let n = probs.len();
    let reps: Vec<Option<f64>> = (0..opts.n_boot)
        .into_par_iter()
        .map(|b| {
            let mut rng = seed::rng(subseed!(seed, "boot", b));
            let (mut ev, mut o) = (0.0, 0.0);
            for _ in 0..n {
                let i = rng.random_range(0..n);
                ev += match opts.mode {
                    VirtualOutcomes::ExpectedEvents => probs[i],
                    VirtualOutcomes::MonteCarlo => f64::from(rng.random_bool(probs[i].clamp(0.0, 1.0))),
                };
                o += observed[i];
            }
            let nf = n as f64;
            Some(odds(ev, nf, "").ok()? / odds(o, nf, "").ok()?)
        })
        .collect();
    summarize(or_point, reps, opts, n)
}

fn summarize(or_point: f64, reps: Vec<Option<f64>>, opts: &BootstrapOptions, n_treated: usize) -> Result<EffectEstimate> {
    let total = reps.len();
    let mut valid: Vec<f64> = reps.into_iter().flatten().collect();
    let degenerate = total - valid.len();
    if degenerate as f64 > opts.max_degenerate * total as f64 || valid.is_empty() {
        return Err(Error::DegenerateBootstrap { degenerate, total });
    }
    valid.sort_by(f64::total_cmp);
    Ok(EffectEstimate {
        outcome: String::new(),
        learner: None,
        generator: None,
        or_point,
        ci_low: quantile_sorted(&valid, opts.alpha / 2.0),
        ci_high: quantile_sorted(&valid, 1.0 - opts.alpha / 2.0),
        alpha: opts.alpha,
        n_boot: total,
        n_treated,
        degenerate_replicates: degenerate,
    })
}

/// Effect estimate for a fixed model: treated rows with a missing `target`
/// are dropped, the rest are predicted once and resampled `B` times.
pub fn bootstrap_ci(
    model: &TrainedModel,
    treated: &Cohort,
    target: &str,
    opts: &BootstrapOptions,
    impute: &ImputeOptions,
    seed: u64,
) -> Result<EffectEstimate> {
    let (kept, y) = observed_treated(treated, target)?;
    let probs = counterfactual_predict(model, &kept, impute, seed)?;
    let mut est = bootstrap_or(&probs, &y, opts, subseed!(seed, "bootstrap"))?;
    est.outcome = target.to_string();
    est.learner = Some(model.algorithm.label().to_string());
    Ok(est)
}

/// Bootstrap that also resamples the control training table and refits
/// `spec` in every replicate. `treated` must have complete predictors.
///
/// With `strata`, training rows are resampled within each stratum so that
/// stratum sizes stay fixed (real and synthetic rows of an augmented table).
pub fn bootstrap_ci_refit(
    spec: &LearnerSpec,
    train: &ImputedTable,
    strata: Option<&[usize]>,
    target: &str,
    treated: &Cohort,
    opts: &BootstrapOptions,
    seed: u64,
) -> Result<EffectEstimate> {
    if opts.n_boot < MIN_BOOT {
        return Err(Error::InvalidArgument(format!("bootstrap needs B >= {MIN_BOOT}, got {}", opts.n_boot)));
    }
    let n_c = train.n_rows();
    let groups: Vec<Vec<usize>> = match strata {
        Some(s) if s.len() != n_c => {
            return Err(Error::InvalidArgument(format!("{} strata labels for {n_c} training rows", s.len())));
        }
        Some(s) => {
            let k = s.iter().max().map_or(0, |m| m + 1);
            let mut g = vec![Vec::new(); k];
            for (r, &l) in s.iter().enumerate() {
                g[l].push(r);
            }
            g.retain(|g| !g.is_empty());
            g
        }
        None => vec![(0..n_c).collect()],
    };
    let (kept, y) = observed_treated(treated, target)?;
    let full = fit(spec, train, target, subseed!(seed, "fit"))?;
    let probs = full.predict_cohort(&kept)?;
    let or_point = odds_ratio(&probs, &y)?;
    let n_t = kept.n_rows();
    let reps: Vec<Option<f64>> = (0..opts.n_boot)
        .into_par_iter()
        .map(|b| {
            let mut rng = seed::rng(subseed!(seed, "boot-refit", b));
            let rows_c: Vec<usize> = groups
                .iter()
                .flat_map(|g| (0..g.len()).map(|_| g[rng.random_range(0..g.len())]).collect::<Vec<_>>())
                .collect();
            let rows_t: Vec<usize> = (0..n_t).map(|_| rng.random_range(0..n_t)).collect();
            let model = fit(spec, &train.select_rows(&rows_c), target, subseed!(seed, "refit", b)).ok()?;
            let p = model.predict_cohort(&kept.select_rows(&rows_t)).ok()?;
            let yb: Vec<f64> = rows_t.iter().map(|&i| y[i]).collect();
            match opts.mode {
                VirtualOutcomes::ExpectedEvents => odds_ratio(&p, &yb).ok(),
                VirtualOutcomes::MonteCarlo => {
                    let draws: Vec<f64> = p.iter().map(|&q| f64::from(rng.random_bool(q.clamp(0.0, 1.0)))).collect();
                    odds_ratio(&draws, &yb).ok()
                }
            }
        })
        .collect();
    let mut est = summarize(or_point, reps, opts, n_t)?;
    est.outcome = target.to_string();
    est.learner = Some(spec.algorithm.label().to_string());
    Ok(est)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn odds_ratio_examples() {
        assert_eq!(odds_ratio(&[0.5; 4], &[1.0, 0.0, 1.0, 0.0]).unwrap(), 1.0);
        let or = odds_ratio(&[0.8; 4], &[1.0, 1.0, 0.0, 0.0]).unwrap();
        assert!((or - 4.0).abs() < 1e-12);
        assert!(matches!(odds_ratio(&[0.5; 2], &[1.0, 1.0]), Err(Error::UndefinedOdds(_))));
        assert!(odds_ratio(&[0.0; 2], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn flip_symmetry() {
        let p = [0.2, 0.7, 0.4, 0.9, 0.35];
        let y = [0.0, 1.0, 1.0, 0.0, 1.0];
        let flipped_p: Vec<f64> = p.iter().map(|v| 1.0 - v).collect();
        let flipped_y: Vec<f64> = y.iter().map(|v| 1.0 - v).collect();
        let prod = odds_ratio(&p, &y).unwrap() * odds_ratio(&flipped_p, &flipped_y).unwrap();
        assert!((prod - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bootstrap_is_deterministic_and_guarded() {
        let mut rng = seed::rng(1);
        let p: Vec<f64> = (0..300).map(|_| rng.random_range(0.2..0.8)).collect();
        let y: Vec<f64> = p.iter().map(|&q| f64::from(rng.random_bool(q))).collect();
        let opts = BootstrapOptions::default();
        let a = bootstrap_or(&p, &y, &opts, 5).unwrap();
        let b = bootstrap_or(&p, &y, &opts, 5).unwrap();
        assert_eq!(a, b);
        assert!(a.ci_low < a.or_point && a.or_point < a.ci_high);
        assert_eq!(a.n_boot, 1000);
        let few = BootstrapOptions { n_boot: 50, ..opts };
        assert!(bootstrap_or(&p, &y, &few, 5).is_err());
        // a single event makes most replicates degenerate
        let mut y1 = vec![0.0; 30];
        y1[0] = 1.0;
        assert!(matches!(
            bootstrap_or(&[0.5; 30], &y1, &opts, 5),
            Err(Error::DegenerateBootstrap { .. })
        ));
    }

    #[test]
    fn monte_carlo_mode_widens_interval() {
        let mut rng = seed::rng(2);
        let p: Vec<f64> = (0..400).map(|_| rng.random_range(0.3..0.7)).collect();
        let y: Vec<f64> = p.iter().map(|&q| f64::from(rng.random_bool(q))).collect();
        let ee = bootstrap_or(&p, &y, &BootstrapOptions::default(), 3).unwrap();
        let mc = bootstrap_or(
            &p,
            &y,
            &BootstrapOptions {
                mode: VirtualOutcomes::MonteCarlo,
                ..BootstrapOptions::default()
            },
            3,
        )
        .unwrap();
        assert_eq!(ee.or_point, mc.or_point);
        assert!(mc.ci_high - mc.ci_low > ee.ci_high - ee.ci_low);
    }
}
