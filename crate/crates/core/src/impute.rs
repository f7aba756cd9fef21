//! Iterative random-forest imputation (missForest).
//!
//! Each call sees exactly one cohort; imputing a test partition therefore
//! never reads training rows.

use crate::cohort::{Cohort, ColumnKind};
use crate::error::{Error, Result};
use crate::learners::features::FeatureMatrix;
use crate::learners::forest::{fit_forest, ForestParams};
use crate::learners::tree::{sqrt_mtry, CartParams, CartTarget};
use crate::subseed;

/// A cohort with no missing cells.
#[derive(Debug, Clone, PartialEq)]
pub struct ImputedTable {
    cohort: Cohort,
    pub iterations_run: usize,
    /// Relative change of the imputed cells per column in the last accepted
    /// iteration (squared-error ratio for numerics, fraction changed for
    /// categoricals). Columns without missing cells report 0.
    pub per_column_change: Vec<(String, f64)>,
}

impl ImputedTable {
    /// Wrap a cohort that is already complete.
    pub fn from_complete(cohort: Cohort) -> Result<Self> {
        if !cohort.is_complete() {
            return Err(Error::InvalidArgument("cohort has missing cells".into()));
        }
        let per_column_change = cohort.schema().columns.iter().map(|c| (c.name.clone(), 0.0)).collect();
        Ok(ImputedTable {
            cohort,
            iterations_run: 0,
            per_column_change,
        })
    }

    pub fn cohort(&self) -> &Cohort {
        &self.cohort
    }

    pub fn into_cohort(self) -> Cohort {
        self.cohort
    }

    pub fn n_rows(&self) -> usize {
        self.cohort.n_rows()
    }

    pub fn select_rows(&self, rows: &[usize]) -> ImputedTable {
        ImputedTable {
            cohort: self.cohort.select_rows(rows),
            iterations_run: self.iterations_run,
            per_column_change: self.per_column_change.clone(),
        }
    }

    /// Append the rows of another complete table with the same schema.
    pub fn append(&mut self, other: &ImputedTable) -> Result<()> {
        self.cohort.append(&other.cohort)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct ImputeOptions {
    pub max_iters: usize,
    pub n_trees: usize,
}

impl Default for ImputeOptions {
    fn default() -> Self {
        ImputeOptions {
            max_iters: 5,
            n_trees: 100,
        }
    }
}

/// Seed of the forest imputing column `col` in iteration `iter` (1-based).
pub fn column_seed(seed: u64, iter: usize, col: usize) -> u64 {
    subseed!(seed, "impute", iter, col)
}

/// Forest settings for imputing a column of `kind` from `n_predictors` others.
pub fn column_forest_params(kind: ColumnKind, n_predictors: usize, n_trees: usize) -> ForestParams {
    ForestParams {
        n_trees,
        cart: CartParams {
            mtry: sqrt_mtry(n_predictors),
            // randomForest terminal node sizes: 5 for regression, 1 for classification
            min_leaf: match kind {
                ColumnKind::Numeric => 5,
                ColumnKind::Categorical => 1,
            },
            ..CartParams::default()
        },
    }
}

pub fn fit_impute(cohort: &Cohort, max_iters: usize, seed: u64) -> Result<ImputedTable> {
    fit_impute_with(
        cohort,
        &ImputeOptions {
            max_iters,
            ..ImputeOptions::default()
        },
        seed,
    )
}

pub fn fit_impute_with(cohort: &Cohort, opts: &ImputeOptions, seed: u64) -> Result<ImputedTable> {
    if cohort.n_rows() == 0 {
        return Err(Error::InvalidArgument("cannot impute a cohort with zero rows".into()));
    }
    if opts.max_iters == 0 {
        return Err(Error::InvalidArgument("max_iters must be at least 1".into()));
    }
    let schema = cohort.schema();
    let p = schema.n_cols();
    let n = cohort.n_rows();
    for (c, col) in schema.columns.iter().enumerate() {
        if cohort.missing_count(c) == n {
            return Err(Error::NoObservedValues(col.name.clone()));
        }
    }
    if cohort.is_complete() {
        return ImputedTable::from_complete(cohort.clone());
    }

    // initial fill: mean / mode of observed cells
    let mut current = cohort.clone();
    for (c, col) in schema.columns.iter().enumerate() {
        let observed: Vec<f64> = (0..n).filter_map(|r| cohort.get(r, c)).collect();
        let fill = match col.kind {
            ColumnKind::Numeric => observed.iter().sum::<f64>() / observed.len() as f64,
            ColumnKind::Categorical => {
                let mut counts = vec![0usize; col.n_levels()];
                for &v in &observed {
                    counts[v as usize] += 1;
                }
                // lowest index wins ties
                let best = (0..counts.len()).max_by_key(|&l| (counts[l], std::cmp::Reverse(l))).unwrap();
                best as f64
            }
        };
        for r in 0..n {
            if cohort.is_missing(r, c) {
                current.set(r, c, fill);
            }
        }
    }

    let mut order: Vec<usize> = (0..p).filter(|&c| cohort.missing_count(c) > 0).collect();
    order.sort_by_key(|&c| (cohort.missing_count(c), c));

    let has_numeric = order.iter().any(|&c| schema.columns[c].kind == ColumnKind::Numeric);
    let has_categorical = order.iter().any(|&c| schema.columns[c].kind == ColumnKind::Categorical);
    let mut prev_delta = (f64::INFINITY, f64::INFINITY);
    let mut iterations_run = 0;
    let mut per_column_change = vec![0.0; p];

    for iter in 1..=opts.max_iters {
        let before = current.clone();
        let mut changes = vec![0.0; p];
        for &c in &order {
            let predictors: Vec<usize> = (0..p).filter(|&j| j != c).collect();
            let x_all = FeatureMatrix::from_cohort(&current, &predictors)?;
            let obs = cohort.observed_rows(c);
            let miss: Vec<usize> = (0..n).filter(|&r| cohort.is_missing(r, c)).collect();
            let x_obs = x_all.subset_rows(&obs);
            let kind = schema.columns[c].kind;
            let params = column_forest_params(kind, predictors.len(), opts.n_trees);
            let s = column_seed(seed, iter, c);
            let preds: Vec<f64> = match kind {
                ColumnKind::Numeric => {
                    let y: Vec<f64> = obs.iter().map(|&r| cohort.value(r, c)).collect();
                    let forest = fit_forest(&x_obs, CartTarget::Regression(&y), &params, s);
                    miss.iter().map(|&r| forest.predict_row(&x_all, r)[0]).collect()
                }
                ColumnKind::Categorical => {
                    let levels = schema.columns[c].n_levels();
                    let labels: Vec<usize> = obs.iter().map(|&r| cohort.value(r, c) as usize).collect();
                    let forest = fit_forest(
                        &x_obs,
                        CartTarget::Classes {
                            labels: &labels,
                            n_classes: levels,
                        },
                        &params,
                        s,
                    );
                    miss.iter()
                        .map(|&r| {
                            let probs = forest.predict_row(&x_all, r);
                            (0..levels)
                                .max_by(|&a, &b| probs[a].total_cmp(&probs[b]).then(b.cmp(&a)))
                                .unwrap() as f64
                        })
                        .collect()
                }
            };
            for (&r, &v) in miss.iter().zip(&preds) {
                current.set(r, c, v);
            }
            changes[c] = match kind {
                ColumnKind::Numeric => {
                    let num: f64 = miss.iter().map(|&r| (current.value(r, c) - before.value(r, c)).powi(2)).sum();
                    let den: f64 = miss.iter().map(|&r| current.value(r, c).powi(2)).sum();
                    if den > 0.0 {
                        num / den
                    } else {
                        0.0
                    }
                }
                ColumnKind::Categorical => {
                    miss.iter().filter(|&&r| current.value(r, c) != before.value(r, c)).count() as f64
                        / miss.len() as f64
                }
            };
        }

        let delta = change_statistics(cohort, &before, &current, &order);
        let num_up = !has_numeric || delta.0 > prev_delta.0;
        let cat_up = !has_categorical || delta.1 > prev_delta.1;
        if iter > 1 && num_up && cat_up {
            // the change grew: keep the previous completion
            current = before;
            break;
        }
        prev_delta = delta;
        iterations_run = iter;
        per_column_change = changes;
    }

    Ok(ImputedTable {
        per_column_change: schema
            .columns
            .iter()
            .zip(per_column_change)
            .map(|(c, v)| (c.name.clone(), v))
            .collect(),
        cohort: current,
        iterations_run,
    })
}

/// Impute only the predictor columns; outcome and treatment columns are
/// neither imputed nor used as predictors and must already be complete.
pub fn fit_impute_features(cohort: &Cohort, opts: &ImputeOptions, seed: u64) -> Result<ImputedTable> {
    let schema = cohort.schema();
    for (c, col) in schema.columns.iter().enumerate() {
        if schema.is_role_column(&col.name) && cohort.missing_count(c) > 0 {
            return Err(Error::InvalidArgument(format!(
                "role column {:?} has missing cells; drop those rows first",
                col.name
            )));
        }
    }
    let features = schema.feature_indices();
    if features.len() == schema.n_cols() {
        return fit_impute_with(cohort, opts, seed);
    }
    if features.is_empty() {
        return ImputedTable::from_complete(cohort.clone());
    }
    let names: Vec<&str> = features.iter().map(|&c| schema.columns[c].name.as_str()).collect();
    let imputed = fit_impute_with(&cohort.select_columns(&names)?, opts, seed)?;
    let mut full = cohort.clone();
    for (j, &c) in features.iter().enumerate() {
        for r in 0..cohort.n_rows() {
            if cohort.is_missing(r, c) {
                full.set(r, c, imputed.cohort.value(r, j));
            }
        }
    }
    let change: std::collections::HashMap<&str, f64> =
        imputed.per_column_change.iter().map(|(n, v)| (n.as_str(), *v)).collect();
    Ok(ImputedTable {
        per_column_change: schema
            .columns
            .iter()
            .map(|c| (c.name.clone(), change.get(c.name.as_str()).copied().unwrap_or(0.0)))
            .collect(),
        iterations_run: imputed.iterations_run,
        cohort: full,
    })
}

/// missForest convergence statistics over all imputed cells:
/// (numeric squared-change ratio, categorical fraction changed).
fn change_statistics(original: &Cohort, before: &Cohort, after: &Cohort, cols: &[usize]) -> (f64, f64) {
    let (mut num, mut den, mut changed, mut total) = (0.0, 0.0, 0usize, 0usize);
    for &c in cols {
        let kind = original.schema().columns[c].kind;
        for r in 0..original.n_rows() {
            if !original.is_missing(r, c) {
                continue;
            }
            let (b, a) = (before.value(r, c), after.value(r, c));
            match kind {
                ColumnKind::Numeric => {
                    num += (a - b) * (a - b);
                    den += a * a;
                }
                ColumnKind::Categorical => {
                    total += 1;
                    changed += usize::from(a != b);
                }
            }
        }
    }
    (
        if den > 0.0 { num / den } else { 0.0 },
        if total > 0 { changed as f64 / total as f64 } else { 0.0 },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{CohortSchema, ColumnSpec};

    fn schema() -> CohortSchema {
        CohortSchema::new(
            vec![ColumnSpec::numeric("a"), ColumnSpec::numeric("b"), ColumnSpec::binary("g")],
            vec![],
            None,
        )
        .unwrap()
    }

    #[test]
    fn complete_cohort_is_identity() {
        let values: Vec<f64> = (0..30).flat_map(|i| [i as f64, (2 * i) as f64, (i % 2) as f64]).collect();
        let c = Cohort::from_values(schema(), 30, values).unwrap();
        let t = fit_impute(&c, 5, 1).unwrap();
        assert_eq!(t.iterations_run, 0);
        assert_eq!(t.cohort(), &c);
    }

    #[test]
    fn errors() {
        let c = Cohort::empty(schema());
        assert!(fit_impute(&c, 5, 1).is_err());
        let values: Vec<f64> = (0..5).flat_map(|i| [i as f64, f64::NAN, 0.0]).collect();
        let c = Cohort::from_values(schema(), 5, values).unwrap();
        assert!(matches!(fit_impute(&c, 5, 1), Err(Error::NoObservedValues(name)) if name == "b"));
    }

    #[test]
    fn observed_cells_preserved_and_mask_cleared() {
        let mut values = Vec::new();
        for i in 0..60 {
            let a = i as f64;
            let b = if i % 7 == 0 { f64::NAN } else { 3.0 * a + 1.0 };
            let g = if i % 11 == 3 { f64::NAN } else { f64::from(i >= 30) };
            values.extend([a, b, g]);
        }
        let c = Cohort::from_values(schema(), 60, values).unwrap();
        let t = fit_impute(&c, 5, 9).unwrap();
        assert!(t.cohort().is_complete());
        assert!(t.iterations_run >= 1);
        for r in 0..60 {
            for col in 0..3 {
                if let Some(v) = c.get(r, col) {
                    assert_eq!(t.cohort().value(r, col), v);
                }
            }
        }
        // imputed b beats the mean fill by a wide margin
        let mean_b = (0..60).filter_map(|r| c.get(r, 1)).sum::<f64>() / c.observed_rows(1).len() as f64;
        let (mut err_rf, mut err_mean) = (0.0, 0.0);
        for r in (0..60).step_by(7) {
            let truth = 3.0 * r as f64 + 1.0;
            err_rf += (t.cohort().value(r, 1) - truth).abs();
            err_mean += (mean_b - truth).abs();
        }
        assert!(err_rf < 0.5 * err_mean, "{err_rf} vs {err_mean}");
        assert_eq!(t, fit_impute(&c, 5, 9).unwrap());
    }
}
