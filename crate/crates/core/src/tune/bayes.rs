//! Gaussian-process Bayesian optimization with Expected Improvement.
//!
//! The surrogate lives on the unit cube: a squared-exponential kernel with a
//! fixed lengthscale, near-zero observation noise and standardized targets.
//! Each round scores a batch of uniformly random candidates by EI and
//! evaluates the best one.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use super::space::HyperSpace;
use crate::error::{Error, Result};
use crate::seed;

/// Raw (search-scale) hyperparameter values.
pub type Candidate = BTreeMap<String, f64>;

pub const LENGTHSCALE: f64 = 0.2;
pub const NOISE: f64 = 1e-6;
pub const EI_CANDIDATES: usize = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub candidate: Candidate,
    pub value: f64,
    /// Expected improvement at proposal time; `None` for initial design points.
    pub ei: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub best: Candidate,
    pub best_value: f64,
    pub log: Vec<Evaluation>,
}

/// Latin-hypercube sample of `n` points in `[0,1]^d`.
pub fn latin_hypercube(n: usize, d: usize, rng: &mut seed::Rng) -> Vec<Vec<f64>> {
    let mut pts = vec![vec![0.0; d]; n];
    for j in 0..d {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(rng);
        for (i, &s) in strata.iter().enumerate() {
            pts[i][j] = (s as f64 + rng.random::<f64>()) / n as f64;
        }
    }
    pts
}

fn kernel(a: &[f64], b: &[f64]) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-d2 / (2.0 * LENGTHSCALE * LENGTHSCALE)).exp()
}

/// GP posterior on standardized targets.
struct Posterior {
    xs: Vec<Vec<f64>>,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    alpha: DVector<f64>,
}

impl Posterior {
    fn fit(xs: &[Vec<f64>], y: &[f64]) -> Self {
        let n = xs.len();
        let mut jitter = NOISE;
        loop {
            let k = DMatrix::from_fn(n, n, |i, j| kernel(&xs[i], &xs[j]) + if i == j { jitter } else { 0.0 });
            if let Some(chol) = k.cholesky() {
                let alpha = chol.solve(&DVector::from_column_slice(y));
                return Posterior {
                    xs: xs.to_vec(),
                    chol,
                    alpha,
                };
            }
            // duplicate points make the kernel matrix singular at tiny noise
            jitter *= 10.0;
        }
    }

    fn predict(&self, x: &[f64]) -> (f64, f64) {
        let k = DVector::from_iterator(self.xs.len(), self.xs.iter().map(|xi| kernel(xi, x)));
        let mean = k.dot(&self.alpha);
        let v = self.chol.solve(&k);
        let var = (1.0 - k.dot(&v)).max(0.0);
        (mean, var.sqrt())
    }
}

/// Expected improvement over `best` for a maximization problem.
pub fn expected_improvement(mean: f64, sd: f64, best: f64) -> f64 {
    let gap = mean - best;
    if sd <= 1e-12 {
        return gap.max(0.0);
    }
    let z = gap / sd;
    let n = Normal::standard();
    (gap * n.cdf(z) + sd * n.pdf(z)).max(0.0)
}

/// Maximize `objective` over `space` with `init_points` Latin-hypercube
/// points followed by `iters` EI-guided proposals.
pub fn bayes_opt<F>(space: &HyperSpace, mut objective: F, init_points: usize, iters: usize, seed: u64) -> Result<TuneResult>
where
    F: FnMut(&Candidate) -> Result<f64>,
{
    space.validate()?;
    if iters == 0 {
        return Err(Error::InvalidArgument("bayes_opt needs at least one iteration".into()));
    }
    let d = space.dims();
    let mut rng = seed::rng(seed);
    let mut log: Vec<Evaluation> = Vec::with_capacity(init_points + iters);
    let mut units: Vec<Vec<f64>> = Vec::new();

    let mut evaluate = |cand: Candidate, ei: Option<f64>, log: &mut Vec<Evaluation>| -> Result<()> {
        let value = objective(&cand)?;
        if !value.is_finite() {
            return Err(Error::NonFiniteObjective(format!("{cand:?} scored {value}")));
        }
        log.push(Evaluation {
            candidate: cand,
            value,
            ei,
        });
        Ok(())
    };

    for u in latin_hypercube(init_points, d, &mut rng) {
        let cand = space.from_unit(&u);
        units.push(space.to_unit(&cand));
        evaluate(cand, None, &mut log)?;
    }

    for _ in 0..iters {
        let proposal = if log.is_empty() {
            let u: Vec<f64> = (0..d).map(|_| rng.random()).collect();
            (space.from_unit(&u), None)
        } else {
            let ys: Vec<f64> = log.iter().map(|e| e.value).collect();
            let mean = ys.iter().sum::<f64>() / ys.len() as f64;
            let sd = (ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / ys.len() as f64).sqrt();
            let sd = if sd > 0.0 { sd } else { 1.0 };
            let z: Vec<f64> = ys.iter().map(|y| (y - mean) / sd).collect();
            let best = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let gp = Posterior::fit(&units, &z);
            let mut top: Option<(f64, Candidate)> = None;
            for _ in 0..EI_CANDIDATES {
                let u: Vec<f64> = (0..d).map(|_| rng.random()).collect();
                let cand = space.from_unit(&u);
                let (m, s) = gp.predict(&space.to_unit(&cand));
                let ei = expected_improvement(m, s, best);
                if top.as_ref().is_none_or(|(e, _)| ei > *e) {
                    top = Some((ei, cand));
                }
            }
            let (ei, cand) = top.expect("candidate batch is nonempty");
            (cand, Some(ei))
        };
        units.push(space.to_unit(&proposal.0));
        evaluate(proposal.0, proposal.1, &mut log)?;
    }

    // first evaluation attaining the maximum
    let best_idx = (0..log.len())
        .max_by(|&a, &b| log[a].value.total_cmp(&log[b].value).then(b.cmp(&a)))
        .expect("log is nonempty");
    Ok(TuneResult {
        best: log[best_idx].candidate.clone(),
        best_value: log[best_idx].value,
        log,
    })
}
