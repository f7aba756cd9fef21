//! Column-major feature matrices extracted from complete cohorts.

use crate::cohort::{fingerprint, Cohort, ColumnKind, ColumnSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum FeatureKind {
    Numeric,
    Categorical { levels: usize },
}

impl FeatureKind {
    pub fn of(spec: &ColumnSpec) -> Self {
        match spec.kind {
            ColumnKind::Numeric => FeatureKind::Numeric,
            ColumnKind::Categorical => FeatureKind::Categorical {
                levels: spec.n_levels(),
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct FeatureMatrix {
    pub n_rows: usize,
    pub columns: Vec<Vec<f64>>,
    pub kinds: Vec<FeatureKind>,
}

impl FeatureMatrix {
    pub fn new(columns: Vec<Vec<f64>>, kinds: Vec<FeatureKind>) -> Self {
        let n_rows = columns.first().map_or(0, Vec::len);
        assert_eq!(columns.len(), kinds.len());
        assert!(columns.iter().all(|c| c.len() == n_rows));
        FeatureMatrix {
            n_rows,
            columns,
            kinds,
        }
    }

    /// Extract the named columns from a complete cohort.
    pub fn from_cohort(cohort: &Cohort, cols: &[usize]) -> Result<Self> {
        let mut columns = Vec::with_capacity(cols.len());
        let mut kinds = Vec::with_capacity(cols.len());
        for &c in cols {
            if cohort.missing_count(c) > 0 {
                return Err(Error::InvalidArgument(format!(
                    "column {:?} has missing cells; impute first",
                    cohort.schema().columns[c].name
                )));
            }
            columns.push(cohort.column(c));
            kinds.push(FeatureKind::of(&cohort.schema().columns[c]));
        }
        Ok(FeatureMatrix {
            n_rows: cohort.n_rows(),
            columns,
            kinds,
        })
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    pub fn subset_rows(&self, rows: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            n_rows: rows.len(),
            columns: self
                .columns
                .iter()
                .map(|c| rows.iter().map(|&r| c[r]).collect())
                .collect(),
            kinds: self.kinds.clone(),
        }
    }

    pub fn row(&self, r: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[r]).collect()
    }
}

/// The predictor columns of a table as bound into a model.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FeatureSchema {
    pub columns: Vec<ColumnSpec>,
    pub fingerprint: String,
}

impl FeatureSchema {
    /// Predictors of `cohort`: all non-role columns, excluding `target`.
    pub fn of(cohort: &Cohort, target: &str) -> Self {
        let columns: Vec<ColumnSpec> = cohort
            .schema()
            .feature_columns()
            .into_iter()
            .filter(|c| c.name != target)
            .collect();
        let fingerprint = fingerprint(&columns);
        FeatureSchema {
            columns,
            fingerprint,
        }
    }

    /// Locate this schema's columns in `cohort`. The cohort's own predictor
    /// set (non-role columns other than `target`) must fingerprint-match.
    pub fn bind(&self, cohort: &Cohort, target: &str) -> Result<Vec<usize>> {
        let theirs = FeatureSchema::of(cohort, target);
        if theirs.fingerprint != self.fingerprint {
            return Err(Error::FingerprintMismatch {
                expected: self.fingerprint.clone(),
                found: theirs.fingerprint,
            });
        }
        Ok(self
            .columns
            .iter()
            .map(|c| cohort.schema().index_of(&c.name).expect("fingerprint matched"))
            .collect())
    }
}
