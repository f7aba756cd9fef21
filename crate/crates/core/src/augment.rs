//! Geometric augmentation-size schedule, cross-validated search for the best
//! synthetic sample size, and construction of the final augmented table.

use std::collections::BTreeSet;
use std::io::Write;

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, FoldPlan};
use crate::error::{Error, Result};
use crate::eval::cv::{evaluate_fold, prepare_folds, Augmentor, CvConfig, FoldMetrics, Metrics, NoObserver, PreparedFold};
use crate::impute::ImputedTable;
use crate::learners::LearnerSpec;
use crate::syngen::{fit_generator, sample, Generator, GeneratorKind, GeneratorOptions};
use crate::tune::HyperSpace;
use crate::{seed, subseed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rounding {
    /// `ceil(b^(i+4))`
    #[default]
    Ceiling,
    /// `round(b^(i+4))`
    Nearest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationSchedule {
    pub mu: f64,
    pub sigma: f64,
    pub n_draws: usize,
    pub n_sizes: usize,
    pub rounding: Rounding,
    pub b_values: Vec<f64>,
    /// `sizes[d][i - 1]` is the size for draw `d` and exponent index `i`.
    pub sizes: Vec<Vec<usize>>,
    pub seed: u64,
}

/// One (draw, index) cell of a schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridPoint {
    pub draw: usize,
    pub i: usize,
    pub size: usize,
}

pub const DEFAULT_MU: f64 = 1.5;
pub const DEFAULT_SIGMA: f64 = 0.005;

pub fn build_schedule(mu: f64, sigma: f64, n_draws: usize, n_sizes: usize, seed: u64) -> Result<AugmentationSchedule> {
    build_schedule_with(mu, sigma, n_draws, n_sizes, Rounding::Ceiling, seed)
}

pub fn build_schedule_with(
    mu: f64,
    sigma: f64,
    n_draws: usize,
    n_sizes: usize,
    rounding: Rounding,
    seed: u64,
) -> Result<AugmentationSchedule> {
    if !(mu > 1.0) || !mu.is_finite() {
        return Err(Error::InvalidArgument(format!("mu must exceed 1 for a growing series, got {mu}")));
    }
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!("sigma must be non-negative, got {sigma}")));
    }
    let mut rng = seed::rng(seed);
    let normal = Normal::new(mu, sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let b_values: Vec<f64> = (0..n_draws)
        .map(|_| loop {
            // redraw outside 5 sigma (probability ~6e-7) or at b <= 1
            let b = normal.sample(&mut rng);
            if (sigma == 0.0 || (b - mu).abs() < 5.0 * sigma) && b > 1.0 {
                break b;
            }
        })
        .collect();
    let sizes = b_values
        .iter()
        .map(|&b| {
            (1..=n_sizes)
                .map(|i| {
                    let v = b.powi(i as i32 + 4);
                    match rounding {
                        Rounding::Ceiling => v.ceil() as usize,
                        Rounding::Nearest => v.round() as usize,
                    }
                })
                .collect()
        })
        .collect();
    Ok(AugmentationSchedule {
        mu,
        sigma,
        n_draws,
        n_sizes,
        rounding,
        b_values,
        sizes,
        seed,
    })
}

impl AugmentationSchedule {
    /// A single-draw schedule over explicit sizes.
    pub fn from_sizes(sizes: Vec<usize>) -> Self {
        AugmentationSchedule {
            mu: f64::NAN,
            sigma: f64::NAN,
            n_draws: 1,
            n_sizes: sizes.len(),
            rounding: Rounding::Ceiling,
            b_values: vec![f64::NAN],
            sizes: vec![sizes],
            seed: 0,
        }
    }

    pub fn grid_points(&self) -> Vec<GridPoint> {
        self.sizes
            .iter()
            .enumerate()
            .flat_map(|(draw, s)| s.iter().enumerate().map(move |(i, &size)| GridPoint { draw, i: i + 1, size }))
            .collect()
    }

    /// Distinct sizes in increasing order.
    pub fn unique_sizes(&self) -> Vec<usize> {
        self.sizes.iter().flatten().copied().collect::<BTreeSet<_>>().into_iter().collect()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.iter().all(Vec::is_empty)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Real,
    Synthetic,
}

#[derive(Debug, Clone)]
pub struct AugmentedDataset {
    pub n0: usize,
    pub n_prime: usize,
    pub table: ImputedTable,
    pub generator: GeneratorKind,
    pub origin: Vec<Origin>,
    pub generator_fit: Option<Generator>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeMetrics {
    pub size: usize,
    pub auc: f64,
    pub ici: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugSelection {
    pub generator: GeneratorKind,
    pub learner: crate::learners::Algorithm,
    pub n_opt: usize,
    pub grid: Vec<SizeMetrics>,
}

/// Highest AUC, then lowest ICI, then the smaller size. Independent of the
/// order of `grid`.
pub fn select_n_opt(grid: &[SizeMetrics]) -> Option<usize> {
    grid.iter()
        .min_by(|a, b| {
            b.auc
                .total_cmp(&a.auc)
                .then(a.ici.total_cmp(&b.ici))
                .then(a.size.cmp(&b.size))
        })
        .map(|m| m.size)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentOptions {
    pub generator: GeneratorOptions,
    /// Sizes above `cap_factor * n0` are skipped.
    pub cap_factor: f64,
}

impl Default for AugmentOptions {
    fn default() -> Self {
        AugmentOptions {
            generator: GeneratorOptions::default(),
            cap_factor: 20.0,
        }
    }
}

/// Fits `kind` on each fold's imputed training partition and appends
/// `size` sampled rows.
pub struct GeneratorAugmentor {
    pub kind: GeneratorKind,
    pub size: usize,
    pub opts: GeneratorOptions,
}

impl Augmentor for GeneratorAugmentor {
    fn synthesize(&self, _fold: usize, train: &ImputedTable, seed: u64) -> Result<Option<ImputedTable>> {
        if self.size == 0 {
            return Ok(None);
        }
        let gen = fit_generator(self.kind, train, &self.opts, subseed!(seed, "fit"))?;
        Ok(Some(sample(&gen, self.size, subseed!(seed, "sample"))?))
    }
}

/// One audited grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRecord {
    pub generator: GeneratorKind,
    pub learner: crate::learners::Algorithm,
    pub draw: usize,
    pub i: usize,
    pub n_prime: usize,
    pub auc: f64,
    pub ici: f64,
}

#[derive(Debug, Clone)]
pub struct AugSearch {
    pub selection: AugSelection,
    pub records: Vec<GridRecord>,
    /// Metrics per evaluated size.
    pub metrics: Vec<(usize, Metrics)>,
}

/// Cross-validated search over the schedule's sizes. Within a fold the
/// generator is fitted once and every size is scored on the same test
/// partition; results match [`crate::eval::nested_cv`] with a
/// [`GeneratorAugmentor`] of the same size.
#[allow(clippy::too_many_arguments)]
pub fn augment_search(
    cohort: &Cohort,
    kind: GeneratorKind,
    spec: &LearnerSpec,
    space: &HyperSpace,
    schedule: &AugmentationSchedule,
    plan: &FoldPlan,
    cfg: &CvConfig,
    opts: &AugmentOptions,
    seed: u64,
) -> Result<AugSearch> {
    let prepared = prepare_folds(cohort, plan, cfg, seed, &NoObserver)?;
    augment_search_prepared(&prepared, cohort.n_rows(), kind, spec, space, schedule, cfg, opts, seed)
}

/// [`augment_search`] over folds already imputed by
/// [`prepare_folds`]; `n0` is the real training-set size used for the cap.
#[allow(clippy::too_many_arguments)]
pub fn augment_search_prepared(
    prepared: &[PreparedFold],
    n0: usize,
    kind: GeneratorKind,
    spec: &LearnerSpec,
    space: &HyperSpace,
    schedule: &AugmentationSchedule,
    cfg: &CvConfig,
    opts: &AugmentOptions,
    seed: u64,
) -> Result<AugSearch> {
    if schedule.is_empty() {
        return Err(Error::InvalidArgument("augmentation schedule is empty".into()));
    }
    let k = prepared.len();
    let cap = (opts.cap_factor * n0 as f64).floor() as usize;
    let sizes: Vec<usize> = schedule
        .unique_sizes()
        .into_iter()
        .filter(|&s| {
            let keep = s <= cap;
            if !keep {
                log::warn!("skipping augmentation size {s}: above cap {cap}");
            }
            keep
        })
        .collect();
    if sizes.is_empty() {
        return Err(Error::InvalidArgument(format!("every schedule size exceeds the cap {cap}")));
    }
    let max_size = *sizes.last().unwrap();

    // one generator fit and one maximal sample per fold; smaller sizes are prefixes
    let pools: Vec<Option<ImputedTable>> = prepared
        .par_iter()
        .map(|pf| {
            if max_size == 0 {
                return Ok(None);
            }
            let s = subseed!(seed, "augment", pf.fold);
            let gen = fit_generator(kind, &pf.train, &opts.generator, subseed!(s, "fit"))?;
            Ok(Some(sample(&gen, max_size, subseed!(s, "sample"))?))
        })
        .enumerate()
        .map(|(f, r): (usize, Result<_>)| r.map_err(|e| e.in_fold(f)))
        .collect::<Result<_>>()?;

    let jobs: Vec<(usize, usize)> = sizes.iter().flat_map(|&s| (0..k).map(move |f| (s, f))).collect();
    let results: Vec<FoldMetrics> = jobs
        .par_iter()
        .map(|&(size, f)| {
            let synthetic = match (&pools[f], size) {
                (_, 0) | (None, _) => None,
                (Some(pool), s) => Some(pool.select_rows(&(0..s).collect::<Vec<_>>())),
            };
            evaluate_fold(&prepared[f], spec, space, cfg, synthetic.as_ref(), seed, &NoObserver).map_err(|e| e.in_fold(f))
        })
        .collect::<Result<_>>()?;

    let metrics: Vec<(usize, Metrics)> = sizes
        .iter()
        .enumerate()
        .map(|(j, &s)| (s, Metrics::from_folds(results[j * k..(j + 1) * k].to_vec())))
        .collect();
    let grid: Vec<SizeMetrics> = metrics
        .iter()
        .map(|(s, m)| SizeMetrics {
            size: *s,
            auc: m.auc,
            ici: m.ici,
        })
        .collect();
    let records = schedule
        .grid_points()
        .into_iter()
        .filter_map(|gp| {
            grid.iter().find(|g| g.size == gp.size).map(|g| GridRecord {
                generator: kind,
                learner: spec.algorithm,
                draw: gp.draw,
                i: gp.i,
                n_prime: gp.size,
                auc: g.auc,
                ici: g.ici,
            })
        })
        .collect();
    Ok(AugSearch {
        selection: AugSelection {
            generator: kind,
            learner: spec.algorithm,
            n_opt: select_n_opt(&grid).expect("grid is nonempty"),
            grid,
        },
        records,
        metrics,
    })
}

/// Write grid records as CSV.
pub fn write_grid_csv<W: Write>(records: &[GridRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["generator", "learner", "draw", "i", "n_prime", "auc", "ici"])?;
    for r in records {
        w.write_record([
            r.generator.id().to_string(),
            r.learner.id().to_string(),
            r.draw.to_string(),
            r.i.to_string(),
            r.n_prime.to_string(),
            format!("{:.6}", r.auc),
            format!("{:.6}", r.ici),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<grid csv>", e))?;
    Ok(())
}

/// Append `n_opt` synthetic rows from a generator fitted to `imputed`.
pub fn augment_table(imputed: &ImputedTable, kind: GeneratorKind, n_opt: usize, opts: &GeneratorOptions, seed: u64) -> Result<AugmentedDataset> {
    let n0 = imputed.n_rows();
    let mut table = imputed.clone();
    let mut origin = vec![Origin::Real; n0];
    let mut generator_fit = None;
    if n_opt > 0 {
        let gen = fit_generator(kind, imputed, opts, subseed!(seed, "fit"))?;
        let synth = sample(&gen, n_opt, subseed!(seed, "sample"))?;
        table.append(&synth)?;
        origin.extend(std::iter::repeat_n(Origin::Synthetic, n_opt));
        generator_fit = Some(gen);
    }
    Ok(AugmentedDataset {
        n0,
        n_prime: n_opt,
        table,
        generator: kind,
        origin,
        generator_fit,
    })
}

/// Impute the full control cohort's predictors, fit the generator on it and
/// append `n_opt` synthetic rows.
pub fn make_final_augmented(
    cohort_full: &Cohort,
    kind: GeneratorKind,
    n_opt: usize,
    impute: &crate::impute::ImputeOptions,
    opts: &GeneratorOptions,
    seed: u64,
) -> Result<AugmentedDataset> {
    let imputed = crate::impute::fit_impute_features(cohort_full, impute, subseed!(seed, "impute"))?;
    augment_table(&imputed, kind, n_opt, opts, subseed!(seed, "generate"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_arithmetic() {
        let s = build_schedule(1.5, 0.0, 1, 6, 0).unwrap();
        assert_eq!(s.sizes[0], vec![8, 12, 18, 26, 39, 58]);
        let s = build_schedule(2.0, 0.0, 1, 1, 0).unwrap();
        assert_eq!(s.sizes[0], vec![32]);
        let s = build_schedule(DEFAULT_MU, DEFAULT_SIGMA, 10, 23, 7).unwrap();
        assert_eq!(s.grid_points().len(), 230);
        for (b, sizes) in s.b_values.iter().zip(&s.sizes) {
            assert!((b - 1.5).abs() < 5.0 * 0.005);
            assert!(sizes.windows(2).all(|w| w[0] < w[1]));
        }
        assert_eq!(s, build_schedule(DEFAULT_MU, DEFAULT_SIGMA, 10, 23, 7).unwrap());
        assert!(build_schedule(1.0, 0.1, 1, 3, 0).is_err());
    }

    #[test]
    fn nearest_rounding() {
        let s = build_schedule_with(1.5, 0.0, 1, 3, Rounding::Nearest, 0).unwrap();
        assert_eq!(s.sizes[0], vec![8, 11, 17]);
    }

    #[test]
    fn sigma_zero_grid_dedupes() {
        let s = build_schedule(1.5, 0.0, 3, 4, 0).unwrap();
        assert_eq!(s.grid_points().len(), 12);
        assert_eq!(s.unique_sizes(), vec![8, 12, 18, 26]);
    }

    #[test]
    fn selection_tie_breaks() {
        let g = |size, auc, ici| SizeMetrics { size, auc, ici };
        assert_eq!(select_n_opt(&[g(10, 0.7, 0.10), g(20, 0.7, 0.08)]), Some(20));
        assert_eq!(select_n_opt(&[g(20, 0.7, 0.08), g(10, 0.7, 0.08)]), Some(10));
        assert_eq!(select_n_opt(&[g(10, 0.6, 0.01), g(20, 0.7, 0.2)]), Some(20));
        assert_eq!(select_n_opt(&[]), None);
    }
}
