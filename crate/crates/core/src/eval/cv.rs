//! Nested cross-validation: per outer fold, impute train and test partitions
//! separately, optionally append synthetic rows to the training side, tune on
//! inner folds, refit and score on the untouched test fold.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, FoldPlan};
use crate::error::{Error, Result};
use crate::impute::{fit_impute_features, ImputeOptions, ImputedTable};
use crate::learners::{binary_target, fit, LearnerSpec, TrainedModel};
use crate::subseed;
use crate::tune::bayes::{bayes_opt, Candidate};
use crate::tune::objective::inner_cv_objective;
use crate::tune::HyperSpace;

use super::metrics::{auc, ici};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TuneBudget {
    pub init_points: usize,
    /// Zero disables tuning; the template hyperparameters are used as given.
    pub iters: usize,
    pub k_inner: usize,
}

impl Default for TuneBudget {
    fn default() -> Self {
        TuneBudget {
            init_points: 10,
            iters: 25,
            k_inner: 3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CvConfig {
    pub target: String,
    pub budget: TuneBudget,
    pub impute: ImputeOptions,
}

impl CvConfig {
    pub fn new(target: impl Into<String>) -> Self {
        CvConfig {
            target: target.into(),
            budget: TuneBudget::default(),
            impute: ImputeOptions::default(),
        }
    }
}

/// Stages of an outer fold, reported to a [`FoldObserver`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    ImputeTrain,
    ImputeTest,
    Generate,
    Tune,
    Fit,
    Score,
}

impl Stage {
    /// Stages that must never see a test-fold row.
    pub fn is_training(self) -> bool {
        !matches!(self, Stage::ImputeTest | Stage::Score)
    }
}

/// Receives the row ids handed to every stage of every outer fold.
pub trait FoldObserver: Sync {
    fn on_access(&self, fold: usize, stage: Stage, row_ids: &[u64]);
}

pub struct NoObserver;

impl FoldObserver for NoObserver {
    fn on_access(&self, _: usize, _: Stage, _: &[u64]) {}
}

/// Produces synthetic rows for an outer fold from its imputed training
/// partition.
pub trait Augmentor: Sync {
    fn synthesize(&self, fold: usize, train: &ImputedTable, seed: u64) -> Result<Option<ImputedTable>>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub auc: f64,
    pub ici: f64,
    pub n_train: usize,
    pub n_synthetic: usize,
    pub n_test: usize,
    pub params: Candidate,
    pub inner_auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub auc: f64,
    pub ici: f64,
    pub fold_values: Vec<FoldMetrics>,
}

impl Metrics {
    pub fn from_folds(fold_values: Vec<FoldMetrics>) -> Self {
        let k = fold_values.len().max(1) as f64;
        Metrics {
            auc: fold_values.iter().map(|f| f.auc).sum::<f64>() / k,
            ici: fold_values.iter().map(|f| f.ici).sum::<f64>() / k,
            fold_values,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Restrict a cohort to its predictors plus `target`, dropping rows whose
/// target is missing (outcomes are never imputed).
pub fn modeling_cohort(cohort: &Cohort, target: &str) -> Result<Cohort> {
    let schema = cohort.schema();
    let t = schema.require(target)?;
    let mut names: Vec<&str> = schema
        .feature_indices()
        .into_iter()
        .map(|c| schema.columns[c].name.as_str())
        .collect();
    names.push(schema.columns[t].name.as_str());
    let projected = cohort.select_columns(&names)?;
    let t = projected.schema().require(target)?;
    Ok(projected.select_rows(&projected.observed_rows(t)))
}

/// An outer fold with both partitions imputed independently.
#[derive(Debug, Clone)]
pub struct PreparedFold {
    pub fold: usize,
    pub train: ImputedTable,
    pub test: ImputedTable,
}

pub fn prepare_fold(cohort: &Cohort, plan: &FoldPlan, fold: usize, cfg: &CvConfig, seed: u64, observer: &dyn FoldObserver) -> Result<PreparedFold> {
    let train = cohort.select_rows(&plan.train_rows(fold));
    let test = cohort.select_rows(&plan.test_rows(fold));
    observer.on_access(fold, Stage::ImputeTrain, train.row_ids());
    let train = fit_impute_features(&train, &cfg.impute, subseed!(seed, "impute-train", fold))?;
    observer.on_access(fold, Stage::ImputeTest, test.row_ids());
    let test = fit_impute_features(&test, &cfg.impute, subseed!(seed, "impute-test", fold))?;
    Ok(PreparedFold { fold, train, test })
}

pub fn prepare_folds(cohort: &Cohort, plan: &FoldPlan, cfg: &CvConfig, seed: u64, observer: &dyn FoldObserver) -> Result<Vec<PreparedFold>> {
    check_plan(cohort, plan, &cfg.target)?;
    (0..plan.k)
        .into_par_iter()
        .map(|f| prepare_fold(cohort, plan, f, cfg, seed, observer).map_err(|e| e.in_fold(f)))
        .collect()
}

fn check_plan(cohort: &Cohort, plan: &FoldPlan, target: &str) -> Result<()> {
    if plan.n_rows() != cohort.n_rows() {
        return Err(Error::InvalidArgument(format!(
            "fold plan covers {} rows but the cohort has {}",
            plan.n_rows(),
            cohort.n_rows()
        )));
    }
    let t = cohort.schema().require(target)?;
    if cohort.missing_count(t) > 0 {
        return Err(Error::InvalidArgument(format!("target {target:?} has missing cells")));
    }
    Ok(())
}

/// Tune, fit and score one prepared fold, with optional synthetic rows
/// appended to its training partition.
pub fn evaluate_fold(
    prepared: &PreparedFold,
    spec: &LearnerSpec,
    space: &HyperSpace,
    cfg: &CvConfig,
    synthetic: Option<&ImputedTable>,
    seed: u64,
    observer: &dyn FoldObserver,
) -> Result<FoldMetrics> {
    let fold = prepared.fold;
    let mut train = prepared.train.clone();
    let n_synthetic = match synthetic {
        Some(s) => {
            train.append(s)?;
            s.n_rows()
        }
        None => 0,
    };

    if cfg.budget.iters > 0 {
        observer.on_access(fold, Stage::Tune, train.cohort().row_ids());
    }
    observer.on_access(fold, Stage::Fit, train.cohort().row_ids());
    let tuned = tune_and_fit(spec, space, &train, &cfg.target, &cfg.budget, subseed!(seed, "fold", fold))?;
    let model = tuned.model;
    observer.on_access(fold, Stage::Score, prepared.test.cohort().row_ids());
    let p = model.predict_cohort(prepared.test.cohort())?;
    let y = binary_target(prepared.test.cohort(), &cfg.target)?;
    Ok(FoldMetrics {
        fold,
        auc: auc(&p, &y)?,
        ici: ici(&p, &y)?,
        n_train: prepared.train.n_rows(),
        n_synthetic,
        n_test: y.len(),
        params: tuned.params,
        inner_auc: tuned.inner_auc,
    })
}

/// A model refitted with its tuned hyperparameters.
#[derive(Debug, Clone)]
pub struct Tuned {
    pub model: TrainedModel,
    pub params: Candidate,
    pub inner_auc: Option<f64>,
}

/// Tune `spec` by Bayesian optimization over inner folds of `train` (unless
/// the budget disables tuning), then refit on all of `train`.
pub fn tune_and_fit(spec: &LearnerSpec, space: &HyperSpace, train: &ImputedTable, target: &str, budget: &TuneBudget, seed: u64) -> Result<Tuned> {
    let mut spec = spec.clone();
    let mut inner_auc = None;
    if budget.iters > 0 {
        let objective = inner_cv_objective(&spec, train, target, budget.k_inner, subseed!(seed, "inner"))?;
        let res = bayes_opt(space, |c| objective.score(c), budget.init_points, budget.iters, subseed!(seed, "bayes"))?;
        spec.hyperparams.extend(res.best.clone());
        inner_auc = Some(res.best_value);
    }
    let model = fit(&spec, train, target, subseed!(seed, "fit"))?;
    Ok(Tuned {
        model,
        params: spec.hyperparams,
        inner_auc,
    })
}

pub fn nested_cv(
    cohort: &Cohort,
    spec: &LearnerSpec,
    space: &HyperSpace,
    plan: &FoldPlan,
    cfg: &CvConfig,
    seed: u64,
    augmentor: Option<&dyn Augmentor>,
) -> Result<Metrics> {
    nested_cv_observed(cohort, spec, space, plan, cfg, seed, augmentor, &NoObserver)
}

/// [`nested_cv`] reporting row access to `observer`.
#[allow(clippy::too_many_arguments)]
pub fn nested_cv_observed(
    cohort: &Cohort,
    spec: &LearnerSpec,
    space: &HyperSpace,
    plan: &FoldPlan,
    cfg: &CvConfig,
    seed: u64,
    augmentor: Option<&dyn Augmentor>,
    observer: &dyn FoldObserver,
) -> Result<Metrics> {
    check_plan(cohort, plan, &cfg.target)?;
    let folds: Vec<FoldMetrics> = (0..plan.k)
        .into_par_iter()
        .map(|f| {
            let prepared = prepare_fold(cohort, plan, f, cfg, seed, observer)?;
            let synthetic = match augmentor {
                Some(a) => {
                    observer.on_access(f, Stage::Generate, prepared.train.cohort().row_ids());
                    a.synthesize(f, &prepared.train, subseed!(seed, "augment", f))?
                }
                None => None,
            };
            evaluate_fold(&prepared, spec, space, cfg, synthetic.as_ref(), seed, observer)
        })
        .enumerate()
        .map(|(f, r)| r.map_err(|e| e.in_fold(f)))
        .collect::<Result<_>>()?;
    Ok(Metrics::from_folds(folds))
}

/// Nested CV over folds that were already imputed by [`prepare_folds`].
pub fn nested_cv_prepared(
    prepared: &[PreparedFold],
    spec: &LearnerSpec,
    space: &HyperSpace,
    cfg: &CvConfig,
    seed: u64,
    augmentor: Option<&dyn Augmentor>,
) -> Result<Metrics> {
    let folds: Vec<FoldMetrics> = prepared
        .par_iter()
        .map(|pf| {
            let f = pf.fold;
            let synthetic = match augmentor {
                Some(a) => a.synthesize(f, &pf.train, subseed!(seed, "augment", f)).map_err(|e| e.in_fold(f))?,
                None => None,
            };
            evaluate_fold(pf, spec, space, cfg, synthetic.as_ref(), seed, &NoObserver).map_err(|e| e.in_fold(f))
        })
        .collect::<Result<_>>()?;
    Ok(Metrics::from_folds(folds))
}
