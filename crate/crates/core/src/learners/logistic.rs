//! L2-penalized logistic regression fitted by iteratively reweighted least
//! squares (Newton–Raphson on the penalized log-likelihood).
//!
//! Numeric features are standardized with training means and standard
//! deviations; categorical features are one-hot encoded with the first level
//! dropped. The intercept is not penalized.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::features::{FeatureKind, FeatureMatrix};
use super::gbt::sigmoid;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum EncodedColumn {
    Numeric { feature: usize, mean: f64, sd: f64 },
    Level { feature: usize, level: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub columns: Vec<EncodedColumn>,
}

impl Encoder {
    pub fn fit(x: &FeatureMatrix) -> Self {
        let mut columns = Vec::new();
        for (f, kind) in x.kinds.iter().enumerate() {
            match kind {
                FeatureKind::Numeric => {
                    let col = &x.columns[f];
                    let n = col.len().max(1) as f64;
                    let mean = col.iter().sum::<f64>() / n;
                    let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                    let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
                    columns.push(EncodedColumn::Numeric { feature: f, mean, sd });
                }
                FeatureKind::Categorical { levels } => {
                    for level in 1..*levels {
                        columns.push(EncodedColumn::Level { feature: f, level });
                    }
                }
            }
        }
        Encoder { columns }
    }

    pub fn width(&self) -> usize {
        self.columns.len() + 1
    }

    /// Design matrix with a leading intercept column.
    pub fn design(&self, x: &FeatureMatrix) -> DMatrix<f64> {
        DMatrix::from_fn(x.n_rows, self.width(), |r, j| {
            if j == 0 {
                return 1.0;
            }
            match self.columns[j - 1] {
                EncodedColumn::Numeric { feature, mean, sd } => (x.columns[feature][r] - mean) / sd,
                EncodedColumn::Level { feature, level } => f64::from(x.columns[feature][r] as usize == level),
            }
        })
    }
}

/// Penalized negative log-likelihood on a fixed design.
pub struct LogisticProblem<'a> {
    pub design: &'a DMatrix<f64>,
    pub y: &'a [f64],
    pub l2: f64,
}

impl LogisticProblem<'_> {
    pub fn loss(&self, beta: &DVector<f64>) -> f64 {
        let eta = self.design * beta;
        let nll: f64 = eta
            .iter()
            .zip(self.y)
            .map(|(&z, &y)| {
                let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
                softplus - y * z
            })
            .sum();
        nll + 0.5 * self.l2 * beta.iter().skip(1).map(|b| b * b).sum::<f64>()
    }

    pub fn gradient(&self, beta: &DVector<f64>) -> DVector<f64> {
        let eta = self.design * beta;
        let resid = DVector::from_iterator(eta.len(), eta.iter().zip(self.y).map(|(&z, &y)| sigmoid(z) - y));
        let mut g = self.design.tr_mul(&resid);
        for j in 1..g.len() {
            g[j] += self.l2 * beta[j];
        }
        g
    }

    pub fn hessian(&self, beta: &DVector<f64>) -> DMatrix<f64> {
        let eta = self.design * beta;
        let mut weighted = self.design.clone();
        for (r, &z) in eta.iter().enumerate() {
            let p = sigmoid(z);
            let w = (p * (1.0 - p)).max(1e-12);
            weighted.row_mut(r).scale_mut(w);
        }
        let mut h = self.design.tr_mul(&weighted);
        for j in 1..h.nrows() {
            h[(j, j)] += self.l2;
        }
        h
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub encoder: Encoder,
    /// Intercept first, then one coefficient per encoded column (standardized scale).
    pub coef: Vec<f64>,
    pub l2: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub const MAX_ITER: usize = 100;
pub const GRADIENT_TOL: f64 = 1e-8;

pub fn fit_logistic(x: &FeatureMatrix, y: &[f64], l2: f64) -> Result<LogisticModel> {
    let encoder = Encoder::fit(x);
    let design = encoder.design(x);
    let problem = LogisticProblem { design: &design, y, l2 };

    let mut beta = DVector::zeros(encoder.width());
    let prevalence = (y.iter().sum::<f64>() / y.len() as f64).clamp(1e-6, 1.0 - 1e-6);
    beta[0] = (prevalence / (1.0 - prevalence)).ln();
    let mut loss = problem.loss(&beta);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < MAX_ITER {
        let g = problem.gradient(&beta);
        if g.norm() < GRADIENT_TOL {
            converged = true;
            break;
        }
        iterations += 1;
        let h = problem.hessian(&beta);
        let step = match h.clone().cholesky() {
            Some(ch) => ch.solve(&g),
            None => {
                // rank-deficient design with no penalty: ridge the Newton system
                let mut hr = h;
                for j in 0..hr.nrows() {
                    hr[(j, j)] += 1e-8;
                }
                hr.lu().solve(&g).ok_or(Error::NonFiniteLoss { iteration: iterations })?
            }
        };
        // step halving keeps the objective monotone
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let cand = &beta - &step * t;
            let cand_loss = problem.loss(&cand);
            if cand_loss.is_finite() && cand_loss <= loss + 1e-12 * loss.abs().max(1.0) {
                beta = cand;
                loss = cand_loss;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { iteration: iterations });
        }
        if !accepted {
            // no descent possible at machine precision
            converged = problem.gradient(&beta).norm() < 1e-6 * (y.len() as f64);
            break;
        }
    }
    Ok(LogisticModel {
        encoder,
        coef: beta.iter().copied().collect(),
        l2,
        iterations,
        converged,
    })
}

impl LogisticModel {
    pub fn predict_proba(&self, x: &FeatureMatrix) -> Vec<f64> {
        self.linear_predictor(x).into_iter().map(sigmoid).collect()
    }

    /// Log-odds for every row of `x`.
    pub fn linear_predictor(&self, x: &FeatureMatrix) -> Vec<f64> {
        let design = self.encoder.design(x);
        let beta = DVector::from_column_slice(&self.coef);
        (design * beta).iter().copied().collect()
    }

    /// Linear map from standardized coefficients to original feature units.
    fn unstandardize_map(&self) -> DMatrix<f64> {
        let w = self.coef.len();
        let mut a = DMatrix::identity(w, w);
        for (j, col) in self.encoder.columns.iter().enumerate() {
            if let EncodedColumn::Numeric { mean, sd, .. } = *col {
                a[(j + 1, j + 1)] = 1.0 / sd;
                a[(0, j + 1)] = -mean / sd;
            }
        }
        a
    }

    /// Coefficients on the original feature scale (intercept first).
    pub fn coefficients(&self) -> Vec<f64> {
        let b = self.unstandardize_map() * DVector::from_column_slice(&self.coef);
        b.iter().copied().collect()
    }

    /// Standard errors of [`Self::coefficients`] from the inverse penalized
    /// Hessian evaluated on `x`, `y`.
    pub fn standard_errors(&self, x: &FeatureMatrix, y: &[f64]) -> Option<Vec<f64>> {
        let design = self.encoder.design(x);
        let problem = LogisticProblem {
            design: &design,
            y,
            l2: self.l2,
        };
        let beta = DVector::from_column_slice(&self.coef);
        let cov = problem.hessian(&beta).try_inverse()?;
        let a = self.unstandardize_map();
        let cov = &a * cov * a.transpose();
        Some((0..cov.nrows()).map(|i| cov[(i, i)].sqrt()).collect())
    }
}
