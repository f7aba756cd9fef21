//! Propensity-score matching: a logistic model of treatment on covariates,
//! greedy 1:1 nearest-neighbour matching on the logit without replacement,
//! and an odds ratio from the matched event table.

use log::warn;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::Cohort;
use crate::error::{Error, Result};
use crate::learners::features::{FeatureKind, FeatureMatrix};
use crate::learners::logistic::fit_logistic;
use crate::stats::{mean, variance};
use crate::{seed, subseed};

use super::{odds, summarize, BootstrapOptions, EffectEstimate, MIN_BOOT};

/// Ridge penalty for the propensity model; only there to keep separated
/// designs finite.
const PROPENSITY_L2: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsmOptions {
    /// Caliper in standard deviations of the propensity logit; `None` disables it.
    pub caliper: Option<f64>,
    pub n_boot: usize,
    pub alpha: f64,
}

impl Default for PsmOptions {
    fn default() -> Self {
        PsmOptions {
            caliper: Some(0.2),
            n_boot: 1000,
            alpha: 0.05,
        }
    }
}

/// Standardized mean difference of one covariate (or one level indicator of
/// a categorical covariate) before and after matching.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Balance {
    pub covariate: String,
    pub smd_before: f64,
    pub smd_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedSet {
    /// (treated row, control row) indices into the input cohort.
    pub pairs: Vec<(usize, usize)>,
    pub caliper: Option<f64>,
    /// Caliper on the logit scale; infinite without a caliper.
    pub caliper_width: f64,
    pub logits: Vec<f64>,
    pub balance: Vec<Balance>,
    pub n_treated: usize,
    pub warnings: Vec<String>,
}

impl MatchedSet {
    pub fn max_abs_smd_after(&self) -> f64 {
        self.balance.iter().map(|b| b.smd_after.abs()).fold(0.0, f64::max)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Greedy nearest-neighbour matching of `treated` units to `controls` on
/// `score`. Treated units are visited in `order`; ties go to the lowest
/// control index.
pub fn greedy_match(score: &[f64], treated: &[usize], controls: &[usize], width: f64) -> Vec<(usize, usize)> {
    let mut used = vec![false; controls.len()];
    let mut pairs = Vec::new();
    for &t in treated {
        let mut best: Option<(usize, f64)> = None;
        for (j, &c) in controls.iter().enumerate() {
            if used[j] {
                continue;
            }
            let d = (score[t] - score[c]).abs();
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((j, d));
            }
        }
        if let Some((j, d)) = best {
            if d <= width {
                used[j] = true;
                pairs.push((t, controls[j]));
            }
        }
    }
    pairs
}

/// Balance columns: numeric covariates as-is, categorical ones as one 0/1
/// indicator per level.
fn balance_columns(x: &FeatureMatrix, names: &[&str]) -> Vec<(String, Vec<f64>)> {
    let mut out = Vec::new();
    for ((col, kind), name) in x.columns.iter().zip(&x.kinds).zip(names) {
        match kind {
            FeatureKind::Numeric => out.push((name.to_string(), col.clone())),
            FeatureKind::Categorical { levels } => {
                for l in 0..*levels {
                    let ind = col.iter().map(|&v| f64::from(v as usize == l)).collect();
                    out.push((format!("{name}={l}"), ind));
                }
            }
        }
    }
    out
}

fn smd(v: &[f64], t: &[usize], c: &[usize], pooled_sd: f64) -> f64 {
    let pick = |rows: &[usize]| -> Vec<f64> { rows.iter().map(|&r| v[r]).collect() };
    let diff = mean(&pick(t)) - mean(&pick(c));
    if pooled_sd > 0.0 {
        diff / pooled_sd
    } else {
        0.0
    }
}

fn pooled_sd(v: &[f64], t: &[usize], c: &[usize]) -> f64 {
    let pick = |rows: &[usize]| -> Vec<f64> { rows.iter().map(|&r| v[r]).collect() };
    ((variance(&pick(t)) + variance(&pick(c))) / 2.0).sqrt()
}

/// Fit the propensity model and match treated to control rows on its logit.
/// Covariates and the treatment column must be complete.
pub fn match_on_propensity(cohort: &Cohort, covariates: &[&str], caliper: Option<f64>, seed: u64) -> Result<MatchedSet> {
    let schema = cohort.schema();
    let treat_name = schema
        .treatment_col
        .as_deref()
        .ok_or_else(|| Error::InvalidArgument("psm needs a treatment column".into()))?;
    let tcol = schema.require(treat_name)?;
    if covariates.is_empty() {
        return Err(Error::InvalidArgument("psm needs at least one covariate".into()));
    }
    if let Some(c) = caliper {
        if !(c > 0.0) {
            return Err(Error::InvalidArgument(format!("caliper must be positive, got {c}")));
        }
    }
    if cohort.missing_count(tcol) > 0 {
        return Err(Error::InvalidArgument(format!("column {treat_name:?} has missing cells")));
    }
    let cov_idx: Vec<usize> = covariates.iter().map(|n| schema.require(n)).collect::<Result<_>>()?;
    let x = FeatureMatrix::from_cohort(cohort, &cov_idx)?;
    let z = cohort.column(tcol);

    let treated: Vec<usize> = (0..z.len()).filter(|&i| z[i] == 1.0).collect();
    let controls: Vec<usize> = (0..z.len()).filter(|&i| z[i] == 0.0).collect();
    if treated.is_empty() || controls.is_empty() {
        return Err(Error::SingleClass(treat_name.to_string()));
    }

    let model = fit_logistic(&x, &z, PROPENSITY_L2)?;
    let logits = model.linear_predictor(&x);
    let sd = variance(&logits).sqrt();
    let width = caliper.map_or(f64::INFINITY, |c| c * sd);

    let mut order = treated.clone();
    order.shuffle(&mut seed::rng(subseed!(seed, "psm-order")));
    let pairs = greedy_match(&logits, &order, &controls, width);
    if pairs.is_empty() {
        return Err(Error::NoMatches);
    }

    let mut warnings = Vec::new();
    if 2 * pairs.len() < treated.len() {
        let msg = format!("only {} of {} treated subjects were matched", pairs.len(), treated.len());
        warn!("{msg}");
        warnings.push(msg);
    }

    let mt: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let mc: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    let balance = balance_columns(&x, covariates)
        .into_iter()
        .map(|(covariate, v)| {
            let sd = pooled_sd(&v, &treated, &controls);
            Balance {
                covariate,
                smd_before: smd(&v, &treated, &controls, sd),
                smd_after: smd(&v, &mt, &mc, sd),
            }
        })
        .collect();

    Ok(MatchedSet {
        pairs,
        caliper,
        caliper_width: width,
        logits,
        balance,
        n_treated: treated.len(),
        warnings,
    })
}

/// Propensity-score matching followed by the control-vs-treated odds ratio
/// of `target` on the matched pairs, with a bootstrap over pairs. `target`
/// must be complete.
pub fn psm_match(cohort: &Cohort, covariates: &[&str], target: &str, opts: &PsmOptions, seed: u64) -> Result<(MatchedSet, EffectEstimate)> {
    let ycol = cohort.schema().require(target)?;
    if cohort.missing_count(ycol) > 0 {
        return Err(Error::InvalidArgument(format!("column {target:?} has missing cells")));
    }
    if opts.n_boot < MIN_BOOT {
        return Err(Error::InvalidArgument(format!("bootstrap needs B >= {MIN_BOOT}, got {}", opts.n_boot)));
    }
    let matched = match_on_propensity(cohort, covariates, opts.caliper, seed)?;
    let y = cohort.column(ycol);

    let pair_y: Vec<(f64, f64)> = matched.pairs.iter().map(|&(t, c)| (y[t], y[c])).collect();
    let or_point = pair_or(pair_y.iter().copied(), pair_y.len())?;
    let np = pair_y.len();
    let reps: Vec<Option<f64>> = (0..opts.n_boot)
        .into_par_iter()
        .map(|b| {
            let mut rng = seed::rng(subseed!(seed, "psm-boot", b));
            pair_or((0..np).map(|_| pair_y[rng.random_range(0..np)]), np).ok()
        })
        .collect();
    let boot = BootstrapOptions {
        n_boot: opts.n_boot,
        alpha: opts.alpha,
        ..BootstrapOptions::default()
    };
    let mut est = summarize(or_point, reps, &boot, np)?;
    est.outcome = target.to_string();
    est.learner = Some("psm".into());
    Ok((matched, est))
}

/// Odds among matched controls over odds among matched treated.
fn pair_or(pairs: impl Iterator<Item = (f64, f64)>, n: usize) -> Result<f64> {
    let (mut et, mut ec) = (0.0, 0.0);
    for (t, c) in pairs {
        et += t;
        ec += c;
    }
    let n = n as f64;
    Ok(odds(ec, n, "matched controls")? / odds(et, n, "matched treated")?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{CohortSchema, ColumnSpec};

    fn toy() -> Cohort {
        // 3 treated and 5 controls; every treated row has an exact control twin
        let rows = [
            (1.0, 0.0, 1.0),
            (2.0, 0.0, 0.0),
            (3.0, 0.0, 1.0),
            (1.0, 1.0, 0.0),
            (2.0, 1.0, 1.0),
            (3.0, 1.0, 1.0),
            (2.0, 0.0, 0.0),
            (1.0, 0.0, 1.0),
        ];
        let schema = CohortSchema::new(
            vec![ColumnSpec::numeric("x"), ColumnSpec::binary("arm"), ColumnSpec::binary("y")],
            vec!["y".into()],
            Some("arm".into()),
        )
        .unwrap();
        let values = rows.iter().flat_map(|&(a, b, c)| [a, b, c]).collect();
        Cohort::from_values(schema, rows.len(), values).unwrap()
    }

    #[test]
    fn exact_twins_match_at_zero_distance() {
        let c = toy();
        let m = match_on_propensity(&c, &["x"], None, 3).unwrap();
        assert_eq!(m.pairs.len(), 3);
        let mut seen = std::collections::HashSet::new();
        for &(t, k) in &m.pairs {
            assert_eq!(c.value(t, 0), c.value(k, 0));
            assert!(seen.insert(k));
        }
    }

    #[test]
    fn greedy_respects_caliper_and_uniqueness() {
        let score = [0.0, 0.1, 5.0, 0.05, 0.06, 9.0];
        let pairs = greedy_match(&score, &[0, 1, 2], &[3, 4, 5], 0.5);
        assert_eq!(pairs, vec![(0, 3), (1, 4)]);
    }

    #[test]
    fn guards() {
        let c = toy();
        let bad = PsmOptions {
            n_boot: 10,
            ..PsmOptions::default()
        };
        assert!(psm_match(&c, &["x"], "y", &bad, 0).is_err());
        assert!(psm_match(&c, &[], "y", &PsmOptions::default(), 0).is_err());
    }
}
