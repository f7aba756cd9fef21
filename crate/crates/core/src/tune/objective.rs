//! Inner cross-validated AUC used as the tuning objective.

use crate::cohort::{split_folds_by, FoldPlan};
use crate::error::{Error, Result};
use crate::eval::metrics::auc;
use crate::impute::ImputedTable;
use crate::learners::{binary_target, fit, LearnerSpec};
use crate::subseed;

use super::bayes::Candidate;

/// Scores candidates by mean held-out AUC over fixed inner folds of one
/// (outer-training) table.
#[derive(Debug, Clone)]
pub struct InnerCvObjective<'a> {
    template: LearnerSpec,
    train: &'a ImputedTable,
    target: String,
    plan: FoldPlan,
    seed: u64,
}

/// Build the objective; inner folds are stratified on `target` and derived
/// from `seed`.
pub fn inner_cv_objective<'a>(
    spec_template: &LearnerSpec,
    train: &'a ImputedTable,
    target: &str,
    k_inner: usize,
    seed: u64,
) -> Result<InnerCvObjective<'a>> {
    if k_inner < 2 {
        return Err(Error::InvalidArgument("k_inner must be at least 2".into()));
    }
    let y = binary_target(train.cohort(), target)?;
    let events = y.iter().filter(|&&v| v == 1.0).count();
    let minority = events.min(y.len() - events);
    if minority < k_inner {
        // stratification cannot put both classes in every inner fold
        return Err(Error::SingleClass(format!(
            "{target}: minority class has {minority} rows, fewer than {k_inner} inner folds"
        )));
    }
    let plan = split_folds_by(train.cohort(), k_inner, subseed!(seed, "inner-folds"), Some(target))?;
    Ok(InnerCvObjective {
        template: spec_template.clone(),
        train,
        target: target.to_string(),
        plan,
        seed,
    })
}

impl InnerCvObjective<'_> {
    pub fn plan(&self) -> &FoldPlan {
        &self.plan
    }

    /// Mean inner-fold AUC of `candidate` (raw hyperparameters layered over
    /// the template's).
    pub fn score(&self, candidate: &Candidate) -> Result<f64> {
        let mut spec = self.template.clone();
        spec.hyperparams.extend(candidate.iter().map(|(k, v)| (k.clone(), *v)));
        let mut total = 0.0;
        for fold in 0..self.plan.k {
            let tr = self.train.select_rows(&self.plan.train_rows(fold));
            let te = self.train.select_rows(&self.plan.test_rows(fold));
            let model = fit(&spec, &tr, &self.target, subseed!(self.seed, "inner-fit", fold))?;
            let p = model.predict_cohort(te.cohort())?;
            let y = binary_target(te.cohort(), &self.target)?;
            total += auc(&p, &y)?;
        }
        Ok(total / self.plan.k as f64)
    }
}
