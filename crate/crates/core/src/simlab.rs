//! Ground-truth cohort simulator.
//!
//! Predictors come from a Gaussian copula with per-column marginals, the
//! treatment from a logistic propensity model, and each outcome from a
//! logistic model evaluated under both arms. Both potential outcomes are
//! kept in a sidecar that pipeline code never reads.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::cohort::{Cohort, CohortSchema, ColumnSpec};
use crate::error::{Error, Result};
use crate::{seed, subseed};

pub const CIDSCANN_LIKE: &str = include_str!("../configs/cidscann_like.toml");

/// Draws used to solve intercepts from target prevalences.
const CALIBRATION_DRAWS: usize = 50_000;
const CALIBRATION_SEED: u64 = 0x5eed_ca1b;

pub const MIN_MC_DRAWS: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Marginal {
    /// Normal, clipped to the optional bounds.
    Numeric {
        mean: f64,
        sd: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lower: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        upper: Option<f64>,
    },
    Categorical { categories: Vec<String>, probs: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimColumn {
    pub name: String,
    #[serde(flatten)]
    pub marginal: Marginal,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub units: String,
    /// Fraction of cells set missing.
    #[serde(default)]
    pub missing: f64,
    /// MAR driver: missingness probability rises with this fully observed
    /// column. MCAR when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mar_on: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    /// Common off-diagonal correlation; ignored when `matrix` is given.
    #[serde(default)]
    pub exchangeable: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<Vec<Vec<f64>>>,
}

/// Coefficient of one predictor. Numeric predictors enter standardized by
/// their configured mean and SD; a scalar on a categorical predictor
/// multiplies the level index, a list gives one term per level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Coef {
    Scalar(f64),
    Levels(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTreatment {
    pub name: String,
    #[serde(default = "default_arms")]
    pub categories: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intercept: Option<f64>,
    /// Target treated fraction; solves the intercept when it is absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prevalence: Option<f64>,
    #[serde(default)]
    pub coefs: BTreeMap<String, Coef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimOutcome {
    pub name: String,
    #[serde(default = "default_binary")]
    pub categories: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intercept: Option<f64>,
    /// Target P(Y(0) = 1); solves the intercept when it is absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prevalence: Option<f64>,
    #[serde(default)]
    pub coefs: BTreeMap<String, Coef>,
    /// Log conditional odds ratio of the treated arm.
    #[serde(default)]
    pub beta_t: f64,
    /// MCAR missingness rate of the observed outcome.
    #[serde(default)]
    pub missing: f64,
}

fn default_arms() -> Vec<String> {
    vec!["control".into(), "treated".into()]
}

fn default_binary() -> Vec<String> {
    vec!["0".into(), "1".into()]
}

fn default_mar_strength() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimCohortConfig {
    /// Slope of the MAR missingness logit on the standardized driver.
    #[serde(default = "default_mar_strength")]
    pub mar_strength: f64,
    #[serde(default)]
    pub correlation: Correlation,
    pub columns: Vec<SimColumn>,
    pub treatment: SimTreatment,
    pub outcomes: Vec<SimOutcome>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Solve `mean(sigmoid(lp + b)) = target` for `b` by bisection.
fn solve_offset(lp: &[f64], target: f64) -> f64 {
    let (mut lo, mut hi) = (-40.0, 40.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        let m = lp.iter().map(|&v| sigmoid(v + mid)).sum::<f64>() / lp.len() as f64;
        if m < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn arm_odds(p: f64, what: &str) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::UndefinedOdds(format!("{what}: event probability {p}")));
    }
    Ok(p / (1.0 - p))
}

/// A coefficient bound to a predictor index.
#[derive(Debug, Clone)]
enum Term {
    Numeric { col: usize, beta: f64, mean: f64, sd: f64 },
    Index { col: usize, beta: f64 },
    Levels { col: usize, betas: Vec<f64> },
}

impl Term {
    fn eval(&self, row: &[f64]) -> f64 {
        match self {
            Term::Numeric { col, beta, mean, sd } => beta * (row[*col] - mean) / sd,
            Term::Index { col, beta } => beta * row[*col],
            Term::Levels { col, betas } => betas[row[*col] as usize],
        }
    }
}

fn linear(terms: &[Term], row: &[f64]) -> f64 {
    terms.iter().map(|t| t.eval(row)).sum()
}

impl SimCohortConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: SimCohortConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// The bundled pediatric Crohn's disease configuration.
    pub fn cidscann_like() -> Self {
        Self::from_toml_str(CIDSCANN_LIKE).expect("bundled config is valid")
    }

    pub fn outcome(&self, name: &str) -> Result<&SimOutcome> {
        self.outcomes
            .iter()
            .find(|o| o.name == name)
            .ok_or_else(|| Error::Config(format!("no simulated outcome {name:?}")))
    }

    pub fn outcome_mut(&mut self, name: &str) -> Result<&mut SimOutcome> {
        self.outcomes
            .iter_mut()
            .find(|o| o.name == name)
            .ok_or_else(|| Error::Config(format!("no simulated outcome {name:?}")))
    }

    fn column_index(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c.name == name)
            .ok_or_else(|| Error::Config(format!("unknown predictor {name:?}")))
    }

    /// Cohort schema: predictors, then treatment, then outcomes.
    pub fn schema(&self) -> Result<CohortSchema> {
        let mut cols: Vec<ColumnSpec> = self
            .columns
            .iter()
            .map(|c| {
                let spec = match &c.marginal {
                    Marginal::Numeric { .. } => ColumnSpec::numeric(&c.name),
                    Marginal::Categorical { categories, .. } => ColumnSpec::categorical(&c.name, categories.iter().cloned()),
                };
                spec.with_units(&c.units)
            })
            .collect();
        cols.push(ColumnSpec::categorical(&self.treatment.name, self.treatment.categories.iter().cloned()));
        for o in &self.outcomes {
            cols.push(ColumnSpec::categorical(&o.name, o.categories.iter().cloned()));
        }
        CohortSchema::new(
            cols,
            self.outcomes.iter().map(|o| o.name.clone()).collect(),
            Some(self.treatment.name.clone()),
        )
    }

    /// The copula correlation matrix over predictors.
    pub fn correlation_matrix(&self) -> DMatrix<f64> {
        let p = self.columns.len();
        match &self.correlation.matrix {
            Some(m) => DMatrix::from_fn(p, p, |i, j| m.get(i).and_then(|r| r.get(j)).copied().unwrap_or(f64::NAN)),
            None => DMatrix::from_fn(p, p, |i, j| if i == j { 1.0 } else { self.correlation.exchangeable }),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.columns.is_empty() {
            return Err(Error::Config("no predictor columns".into()));
        }
        if self.outcomes.is_empty() {
            return Err(Error::Config("no outcomes".into()));
        }
        self.schema().map_err(|e| Error::Config(e.to_string()))?;
        for c in &self.columns {
            let bad = |what: String| Err(Error::Config(format!("column {:?}: {what}", c.name)));
            match &c.marginal {
                Marginal::Numeric { mean, sd, lower, upper } => {
                    if !mean.is_finite() || !(*sd > 0.0 && sd.is_finite()) {
                        return bad(format!("needs finite mean and positive sd, got {mean} / {sd}"));
                    }
                    if let (Some(l), Some(u)) = (lower, upper) {
                        if l >= u {
                            return bad(format!("lower bound {l} is not below upper bound {u}"));
                        }
                    }
                }
                Marginal::Categorical { categories, probs } => {
                    if categories.len() != probs.len() {
                        return bad(format!("{} categories but {} probabilities", categories.len(), probs.len()));
                    }
                    let total: f64 = probs.iter().sum();
                    if probs.iter().any(|p| !(*p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
                        return bad(format!("probabilities must be non-negative and sum to 1, got {total}"));
                    }
                }
            }
            if !(0.0..1.0).contains(&c.missing) {
                return bad(format!("missingness rate {} is outside [0, 1)", c.missing));
            }
            if let Some(d) = &c.mar_on {
                let driver = &self.columns[self.column_index(d)?];
                if driver.name == c.name || driver.missing > 0.0 {
                    return bad(format!("MAR driver {d:?} must be another, fully observed column"));
                }
            }
        }
        for o in &self.outcomes {
            if !(0.0..1.0).contains(&o.missing) {
                return Err(Error::Config(format!("outcome {:?}: missingness {} is outside [0, 1)", o.name, o.missing)));
            }
            if !o.beta_t.is_finite() {
                return Err(Error::Config(format!("outcome {:?}: beta_t must be finite", o.name)));
            }
            check_intercept(&o.name, o.intercept, o.prevalence)?;
            self.terms(&o.coefs)?;
        }
        check_intercept(&self.treatment.name, self.treatment.intercept, self.treatment.prevalence)?;
        self.terms(&self.treatment.coefs)?;
        self.copula_factor()?;
        Ok(())
    }

    fn terms(&self, coefs: &BTreeMap<String, Coef>) -> Result<Vec<Term>> {
        let mut out = Vec::with_capacity(coefs.len());
        for (name, coef) in coefs {
            let col = self.column_index(name)?;
            let term = match (&self.columns[col].marginal, coef) {
                (Marginal::Numeric { mean, sd, .. }, Coef::Scalar(b)) => Term::Numeric {
                    col,
                    beta: *b,
                    mean: *mean,
                    sd: *sd,
                },
                (Marginal::Categorical { .. }, Coef::Scalar(b)) => Term::Index { col, beta: *b },
                (Marginal::Categorical { probs, .. }, Coef::Levels(v)) if v.len() == probs.len() => Term::Levels { col, betas: v.clone() },
                _ => return Err(Error::Config(format!("coefficient for {name:?} does not fit its column"))),
            };
            out.push(term);
        }
        Ok(out)
    }

    /// `F` with `F Fᵀ` equal to the correlation matrix.
    fn copula_factor(&self) -> Result<DMatrix<f64>> {
        let r = self.correlation_matrix();
        let p = r.nrows();
        for i in 0..p {
            if (r[(i, i)] - 1.0).abs() > 1e-9 {
                return Err(Error::Config("correlation diagonal must be 1".into()));
            }
            for j in 0..p {
                if !r[(i, j)].is_finite() || (r[(i, j)] - r[(j, i)]).abs() > 1e-9 {
                    return Err(Error::Config("correlation matrix must be a finite symmetric p x p matrix".into()));
                }
            }
        }
        let eig = SymmetricEigen::new(r);
        let min = eig.eigenvalues.min();
        if min < -1e-9 {
            return Err(Error::NotPsd(min));
        }
        let roots = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
        Ok(eig.eigenvectors * roots)
    }

    /// Resolve intercepts and the copula factor once per simulation.
    fn prepare(&self) -> Result<Prepared> {
        self.validate()?;
        let factor = self.copula_factor()?;
        let cum: Vec<Option<Vec<f64>>> = self
            .columns
            .iter()
            .map(|c| match &c.marginal {
                Marginal::Categorical { probs, .. } => Some(
                    probs
                        .iter()
                        .scan(0.0, |acc, p| {
                            *acc += p;
                            Some(*acc)
                        })
                        .collect(),
                ),
                Marginal::Numeric { .. } => None,
            })
            .collect();
        let mut prep = Prepared {
            factor,
            cum,
            treatment_terms: self.terms(&self.treatment.coefs)?,
            treatment_intercept: self.treatment.intercept.unwrap_or(0.0),
            outcome_terms: self.outcomes.iter().map(|o| self.terms(&o.coefs)).collect::<Result<_>>()?,
            outcome_intercepts: self.outcomes.iter().map(|o| o.intercept.unwrap_or(0.0)).collect(),
        };
        let needs_calibration = self.treatment.intercept.is_none() || self.outcomes.iter().any(|o| o.intercept.is_none());
        if needs_calibration {
            let rows = prep.draw_rows(self, CALIBRATION_DRAWS, &mut seed::rng(CALIBRATION_SEED));
            if let (None, Some(p)) = (self.treatment.intercept, self.treatment.prevalence) {
                let lp: Vec<f64> = rows.iter().map(|r| linear(&prep.treatment_terms, r)).collect();
                prep.treatment_intercept = solve_offset(&lp, p);
            }
            for (k, o) in self.outcomes.iter().enumerate() {
                if let (None, Some(p)) = (o.intercept, o.prevalence) {
                    let lp: Vec<f64> = rows.iter().map(|r| linear(&prep.outcome_terms[k], r)).collect();
                    prep.outcome_intercepts[k] = solve_offset(&lp, p);
                }
            }
        }
        Ok(prep)
    }
}

fn check_intercept(name: &str, intercept: Option<f64>, prevalence: Option<f64>) -> Result<()> {
    match (intercept, prevalence) {
        (Some(b), None) if b.is_finite() => Ok(()),
        (None, Some(p)) if p > 0.0 && p < 1.0 => Ok(()),
        _ => Err(Error::Config(format!(
            "{name:?}: give exactly one of a finite intercept or a prevalence in (0, 1)"
        ))),
    }
}

struct Prepared {
    factor: DMatrix<f64>,
    cum: Vec<Option<Vec<f64>>>,
    treatment_terms: Vec<Term>,
    treatment_intercept: f64,
    outcome_terms: Vec<Vec<Term>>,
    outcome_intercepts: Vec<f64>,
}

impl Prepared {
    /// Complete predictor rows drawn through the copula.
    fn draw_rows<R: Rng>(&self, cfg: &SimCohortConfig, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
        let p = cfg.columns.len();
        let normal = Normal::standard();
        let mut eps = vec![0.0; p];
        (0..n)
            .map(|_| {
                for e in eps.iter_mut() {
                    *e = rng.sample(StandardNormal);
                }
                (0..p)
                    .map(|j| {
                        let z: f64 = (0..p).map(|k| self.factor[(j, k)] * eps[k]).sum();
                        match (&cfg.columns[j].marginal, &self.cum[j]) {
                            (Marginal::Numeric { mean, sd, lower, upper }, _) => {
                                let v = mean + sd * z;
                                v.max(lower.unwrap_or(f64::NEG_INFINITY)).min(upper.unwrap_or(f64::INFINITY))
                            }
                            (Marginal::Categorical { .. }, Some(cum)) => {
                                let u = normal.cdf(z);
                                cum.iter().position(|&c| u < c).unwrap_or(cum.len() - 1) as f64
                            }
                            _ => unreachable!("cumulative probabilities exist for categorical columns"),
                        }
                    })
                    .collect()
            })
            .collect()
    }
}

/// Both potential outcomes of one simulated outcome, plus their
/// probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialOutcome {
    pub name: String,
    pub y0: Vec<f64>,
    pub y1: Vec<f64>,
    pub p0: Vec<f64>,
    pub p1: Vec<f64>,
}

/// Side channel of a simulation: never part of the cohort itself.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialOutcomes {
    pub row_ids: Vec<u64>,
    pub treatment: Vec<f64>,
    pub outcomes: Vec<PotentialOutcome>,
}

impl PotentialOutcomes {
    fn select(&self, rows: &[usize]) -> PotentialOutcomes {
        let pick = |v: &[f64]| rows.iter().map(|&r| v[r]).collect::<Vec<_>>();
        PotentialOutcomes {
            row_ids: rows.iter().map(|&r| self.row_ids[r]).collect(),
            treatment: pick(&self.treatment),
            outcomes: self
                .outcomes
                .iter()
                .map(|o| PotentialOutcome {
                    name: o.name.clone(),
                    y0: pick(&o.y0),
                    y1: pick(&o.y1),
                    p0: pick(&o.p0),
                    p1: pick(&o.p1),
                })
                .collect(),
        }
    }

    fn append(&mut self, other: &PotentialOutcomes) {
        self.row_ids.extend_from_slice(&other.row_ids);
        self.treatment.extend_from_slice(&other.treatment);
        for (a, b) in self.outcomes.iter_mut().zip(&other.outcomes) {
            a.y0.extend_from_slice(&b.y0);
            a.y1.extend_from_slice(&b.y1);
            a.p0.extend_from_slice(&b.p0);
            a.p1.extend_from_slice(&b.p1);
        }
    }

    pub fn get(&self, name: &str) -> Option<&PotentialOutcome> {
        self.outcomes.iter().find(|o| o.name == name)
    }

    /// Sidecar CSV: `row_id, treatment`, then `y0, y1, p0, p1` per outcome.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["row_id".to_string(), "treatment".to_string()];
        for o in &self.outcomes {
            for s in ["y0", "y1", "p0", "p1"] {
                header.push(format!("{}_{s}", o.name));
            }
        }
        w.write_record(&header)?;
        for i in 0..self.row_ids.len() {
            let mut rec = vec![self.row_ids[i].to_string(), self.treatment[i].to_string()];
            for o in &self.outcomes {
                rec.extend([o.y0[i], o.y1[i], o.p0[i], o.p1[i]].map(|v| v.to_string()));
            }
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SimulatedCohort {
    pub cohort: Cohort,
    pub potential: PotentialOutcomes,
}

impl SimulatedCohort {
    /// Rows in the control arm (treatment level 0).
    pub fn controls(&self) -> Cohort {
        self.arm(0)
    }

    /// Rows in the treated arm (treatment level 1).
    pub fn treated(&self) -> Cohort {
        self.arm(1)
    }

    fn arm(&self, level: usize) -> Cohort {
        let t = self
            .cohort
            .schema()
            .treatment_col
            .as_deref()
            .and_then(|t| self.cohort.schema().index_of(t))
            .expect("simulated cohorts carry a treatment column");
        self.cohort.select_rows(&self.cohort.rows_with_level(t, level))
    }
}

/// Simulate `n` subjects.
pub fn simulate_cohort(cfg: &SimCohortConfig, n: usize, seed: u64) -> Result<SimulatedCohort> {
    if n == 0 {
        return Err(Error::InvalidArgument("simulate_cohort needs n >= 1".into()));
    }
    let prep = cfg.prepare()?;
    simulate_prepared(cfg, &prep, n, seed)
}

fn simulate_prepared(cfg: &SimCohortConfig, prep: &Prepared, n: usize, seed: u64) -> Result<SimulatedCohort> {
    let schema = cfg.schema()?;
    let p = cfg.columns.len();
    let width = schema.n_cols();
    let rows = prep.draw_rows(cfg, n, &mut seed::rng(subseed!(seed, "covariates")));

    let mut rng = seed::rng(subseed!(seed, "treatment"));
    let treatment: Vec<f64> = rows
        .iter()
        .map(|r| f64::from(rng.random_bool(sigmoid(prep.treatment_intercept + linear(&prep.treatment_terms, r)))))
        .collect();

    let mut outcomes = Vec::with_capacity(cfg.outcomes.len());
    for (k, o) in cfg.outcomes.iter().enumerate() {
        let mut rng = seed::rng(subseed!(seed, "outcome", &o.name));
        let mut po = PotentialOutcome {
            name: o.name.clone(),
            y0: Vec::with_capacity(n),
            y1: Vec::with_capacity(n),
            p0: Vec::with_capacity(n),
            p1: Vec::with_capacity(n),
        };
        for r in &rows {
            let lp = prep.outcome_intercepts[k] + linear(&prep.outcome_terms[k], r);
            let (p0, p1) = (sigmoid(lp), sigmoid(lp + o.beta_t));
            // one uniform couples the two potential outcomes
            let u: f64 = rng.random();
            po.y0.push(f64::from(u < p0));
            po.y1.push(f64::from(u < p1));
            po.p0.push(p0);
            po.p1.push(p1);
        }
        outcomes.push(po);
    }

    let mut values = Vec::with_capacity(n * width);
    for (i, r) in rows.iter().enumerate() {
        values.extend_from_slice(r);
        values.push(treatment[i]);
        for po in &outcomes {
            values.push(if treatment[i] == 1.0 { po.y1[i] } else { po.y0[i] });
        }
    }
    let mut mask = vec![false; n * width];
    for (j, c) in cfg.columns.iter().enumerate() {
        if c.missing == 0.0 {
            continue;
        }
        let probs = missing_probs(cfg, &rows, c, cfg.mar_strength)?;
        let mut rng = seed::rng(subseed!(seed, "missing", &c.name));
        for (i, &pm) in probs.iter().enumerate() {
            mask[i * width + j] = rng.random_bool(pm);
        }
    }
    for (k, o) in cfg.outcomes.iter().enumerate() {
        let mut rng = seed::rng(subseed!(seed, "missing", &o.name));
        for i in 0..n {
            mask[i * width + p + 1 + k] = rng.random_bool(o.missing);
        }
    }

    let cohort = Cohort::new(schema, n, values, mask)?;
    let potential = PotentialOutcomes {
        row_ids: cohort.row_ids().to_vec(),
        treatment,
        outcomes,
    };
    Ok(SimulatedCohort { cohort, potential })
}

/// Per-row missingness probabilities averaging to the column's rate.
fn missing_probs(cfg: &SimCohortConfig, rows: &[Vec<f64>], col: &SimColumn, strength: f64) -> Result<Vec<f64>> {
    let n = rows.len();
    let Some(driver) = &col.mar_on else {
        return Ok(vec![col.missing; n]);
    };
    let d = cfg.column_index(driver)?;
    let v: Vec<f64> = rows.iter().map(|r| r[d]).collect();
    let m = v.iter().sum::<f64>() / n as f64;
    let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n as f64).sqrt();
    if sd == 0.0 {
        return Ok(vec![col.missing; n]);
    }
    let lp: Vec<f64> = v.iter().map(|x| strength * (x - m) / sd).collect();
    let b = solve_offset(&lp, col.missing);
    Ok(lp.iter().map(|&x| sigmoid(x + b)).collect())
}

/// Simulate until each arm holds the requested number of subjects; controls
/// come first in the result. Row ids are renumbered from zero.
pub fn simulate_arms(cfg: &SimCohortConfig, n_control: usize, n_treated: usize, seed: u64) -> Result<SimulatedCohort> {
    const MAX_BATCHES: usize = 200;
    let prep = cfg.prepare()?;
    let batch = (2 * (n_control + n_treated)).max(1000);
    let t_idx = cfg.columns.len();
    let mut arms: [Option<SimulatedCohort>; 2] = [None, None];
    let wanted = [n_control, n_treated];
    for b in 0..MAX_BATCHES {
        let sim = simulate_prepared(cfg, &prep, batch, subseed!(seed, "batch", b))?;
        for level in 0..2 {
            let have = arms[level].as_ref().map_or(0, |s| s.cohort.n_rows());
            let need = wanted[level] - have;
            if need == 0 {
                continue;
            }
            let rows: Vec<usize> = sim.cohort.rows_with_level(t_idx, level).into_iter().take(need).collect();
            let part = SimulatedCohort {
                cohort: sim.cohort.select_rows(&rows),
                potential: sim.potential.select(&rows),
            };
            match &mut arms[level] {
                Some(acc) => {
                    acc.cohort.append(&part.cohort)?;
                    acc.potential.append(&part.potential);
                }
                None => arms[level] = Some(part),
            }
        }
        let done = (0..2).all(|l| arms[l].as_ref().map_or(0, |s| s.cohort.n_rows()) == wanted[l]);
        if done {
            let [Some(mut out), Some(treated)] = arms else {
                unreachable!("both arms filled")
            };
            out.cohort.append(&treated.cohort)?;
            out.potential.append(&treated.potential);
            let ids: Vec<u64> = (0..out.cohort.n_rows() as u64).collect();
            out.cohort = out.cohort.with_row_ids(ids.clone());
            out.potential.row_ids = ids;
            return Ok(out);
        }
    }
    Err(Error::InvalidArgument(format!(
        "could not fill {n_control} control and {n_treated} treated subjects in {MAX_BATCHES} batches"
    )))
}

/// Population over which a marginal odds ratio is averaged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimand {
    /// Every subject.
    #[default]
    Population,
    /// Subjects weighted by their probability of treatment; the quantity a
    /// virtual control arm estimates.
    Treated,
}

/// Outcome linear predictors (without the treatment term) and weights for
/// `n` covariate draws.
fn weighted_predictors(cfg: &SimCohortConfig, outcome: &str, estimand: Estimand, n: usize, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    let prep = cfg.prepare()?;
    let k = cfg
        .outcomes
        .iter()
        .position(|o| o.name == outcome)
        .ok_or_else(|| Error::Config(format!("no simulated outcome {outcome:?}")))?;
    let rows = prep.draw_rows(cfg, n, &mut seed::rng(subseed!(seed, "marginal-or")));
    let lp = rows.iter().map(|r| prep.outcome_intercepts[k] + linear(&prep.outcome_terms[k], r)).collect();
    let w = match estimand {
        Estimand::Population => vec![1.0; n],
        Estimand::Treated => rows
            .iter()
            .map(|r| sigmoid(prep.treatment_intercept + linear(&prep.treatment_terms, r)))
            .collect(),
    };
    Ok((lp, w))
}

fn check_mc(n_mc: usize) -> Result<()> {
    if n_mc < MIN_MC_DRAWS {
        return Err(Error::InvalidArgument(format!("marginal odds ratio needs n_mc >= {MIN_MC_DRAWS}, got {n_mc}")));
    }
    Ok(())
}

/// Population odds of Y(0) over odds of Y(1) for `outcome`, by Monte Carlo
/// over `n_mc` subjects' covariates.
pub fn true_marginal_or(cfg: &SimCohortConfig, outcome: &str, n_mc: usize, seed: u64) -> Result<f64> {
    true_marginal_or_for(cfg, outcome, Estimand::Population, n_mc, seed)
}

/// [`true_marginal_or`] averaged over the chosen population.
pub fn true_marginal_or_for(cfg: &SimCohortConfig, outcome: &str, estimand: Estimand, n_mc: usize, seed: u64) -> Result<f64> {
    check_mc(n_mc)?;
    let (lp, w) = weighted_predictors(cfg, outcome, estimand, n_mc, seed)?;
    marginal_or_of(&lp, &w, cfg.outcome(outcome)?.beta_t)
}

fn marginal_or_of(lp: &[f64], w: &[f64], beta_t: f64) -> Result<f64> {
    let sw: f64 = w.iter().sum();
    let p0 = lp.iter().zip(w).map(|(&v, &w)| w * sigmoid(v)).sum::<f64>() / sw;
    let p1 = lp.iter().zip(w).map(|(&v, &w)| w * sigmoid(v + beta_t)).sum::<f64>() / sw;
    Ok(arm_odds(p0, "Y(0)")? / arm_odds(p1, "Y(1)")?)
}

/// The `beta_t` giving a true population marginal odds ratio of `target`
/// for `outcome`.
pub fn calibrate_beta_t(cfg: &SimCohortConfig, outcome: &str, target: f64, n_mc: usize, seed: u64) -> Result<f64> {
    calibrate_beta_t_for(cfg, outcome, Estimand::Population, target, n_mc, seed)
}

/// [`calibrate_beta_t`] for the chosen population.
pub fn calibrate_beta_t_for(cfg: &SimCohortConfig, outcome: &str, estimand: Estimand, target: f64, n_mc: usize, seed: u64) -> Result<f64> {
    if !(target > 0.0 && target.is_finite()) {
        return Err(Error::InvalidArgument(format!("calibrate_beta_t: target odds ratio {target}")));
    }
    check_mc(n_mc)?;
    let (lp, w) = weighted_predictors(cfg, outcome, estimand, n_mc, seed)?;
    // the marginal OR falls as beta_t rises
    let (mut lo, mut hi) = (-20.0, 20.0);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if marginal_or_of(&lp, &w, mid)? > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
