//! Adversarial random forests with forest density estimation.
//!
//! A forest repeatedly learns to tell real rows from synthetic ones; each
//! round's synthetic rows are drawn from within-leaf marginals of the
//! previous forest. Once the out-of-bag accuracy drops below the threshold,
//! the leaves of the last forest approximate regions where the columns are
//! independent, and a per-leaf product density is fitted to the real rows.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::{check_table, Diagnostics, Generator, GeneratorKind, Model};
use crate::error::{Error, Result};
use crate::impute::ImputedTable;
use crate::learners::features::{FeatureKind, FeatureMatrix};
use crate::learners::forest::{fit_forest_with_oob, Forest, ForestParams};
use crate::learners::tree::{sqrt_mtry, CartParams, CartTarget, Node, SplitRule};
use crate::{seed, subseed};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArfParams {
    pub n_trees: usize,
    pub min_leaf: usize,
    pub max_rounds: usize,
    /// Stop once the discriminator's OOB accuracy falls below this.
    pub accuracy_threshold: f64,
}

impl Default for ArfParams {
    fn default() -> Self {
        ArfParams {
            n_trees: 20,
            min_leaf: 5,
            max_rounds: 10,
            accuracy_threshold: 0.55,
        }
    }
}

pub const MIN_ROWS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LeafDist {
    /// Normal truncated to `[lo, hi]`.
    Normal { mean: f64, sd: f64, lo: f64, hi: f64 },
    Categorical { probs: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArfLeaf {
    pub weight: f64,
    pub dists: Vec<LeafDist>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArfModel {
    pub leaves: Vec<ArfLeaf>,
    cumulative: Vec<f64>,
}

pub fn fit_arf(table: &ImputedTable, seed: u64) -> Result<Generator> {
    fit_arf_with(table, &ArfParams::default(), seed)
}

pub fn fit_arf_with(table: &ImputedTable, params: &ArfParams, seed: u64) -> Result<Generator> {
    check_table(table, "fit_arf")?;
    let n = table.n_rows();
    if n < MIN_ROWS {
        return Err(Error::InvalidArgument(format!("fit_arf needs at least {MIN_ROWS} rows, got {n}")));
    }
    let cohort = table.cohort();
    let p = cohort.n_cols();
    let real = FeatureMatrix::from_cohort(cohort, &(0..p).collect::<Vec<_>>())?;
    let mut rng = seed::rng(subseed!(seed, "arf"));

    // round 1 synthetic data: independent column permutations
    let mut synth: Vec<Vec<f64>> = real
        .columns
        .iter()
        .map(|c| {
            let mut c = c.clone();
            c.shuffle(&mut rng);
            c
        })
        .collect();

    let labels: Vec<usize> = (0..2 * n).map(|i| usize::from(i < n)).collect();
    let forest_params = ForestParams {
        n_trees: params.n_trees,
        cart: CartParams {
            mtry: sqrt_mtry(p),
            min_leaf: params.min_leaf,
            ..CartParams::default()
        },
    };
    let mut accuracy = Vec::new();
    let mut converged = false;
    let forest = loop {
        let round = accuracy.len() + 1;
        let combined = FeatureMatrix::new(
            real.columns.iter().zip(&synth).map(|(r, s)| [r.as_slice(), s.as_slice()].concat()).collect(),
            real.kinds.clone(),
        );
        let (forest, oob) = fit_forest_with_oob(
            &combined,
            CartTarget::Classes {
                labels: &labels,
                n_classes: 2,
            },
            &forest_params,
            subseed!(seed, "arf-forest", round),
        );
        let (mut hit, mut seen) = (0usize, 0usize);
        for (o, &l) in oob.iter().zip(&labels) {
            if let Some(v) = o {
                seen += 1;
                hit += usize::from(usize::from(v[1] > 0.5) == l);
            }
        }
        let acc = if seen > 0 { hit as f64 / seen as f64 } else { 0.5 };
        accuracy.push(acc);
        if acc < params.accuracy_threshold {
            converged = true;
            break forest;
        }
        if round >= params.max_rounds {
            log::warn!("ARF did not converge after {round} rounds (OOB accuracy {acc:.3})");
            break forest;
        }
        synth = resample_within_leaves(&forest, &real, n, &mut rng);
    };

    let model = forde(&forest, &real);
    Ok(Generator::new(
        GeneratorKind::Arf,
        cohort.schema().clone(),
        Diagnostics::Arf {
            rounds: accuracy.len(),
            oob_accuracy: accuracy,
            converged,
        },
        Model::Arf(model),
    ))
}

/// Leaf node index of every real row, per tree.
fn leaf_members(forest: &Forest, real: &FeatureMatrix) -> Vec<Vec<(usize, Vec<usize>)>> {
    forest
        .trees
        .iter()
        .map(|tree| {
            let mut by_leaf: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
            for r in 0..real.n_rows {
                by_leaf.entry(tree.leaf_index(|f| real.columns[f][r])).or_default().push(r);
            }
            by_leaf.into_iter().collect()
        })
        .collect()
}

/// Draw rows by picking a real row's leaf in a random tree, then each column
/// from a random real member of that leaf.
fn resample_within_leaves(forest: &Forest, real: &FeatureMatrix, m: usize, rng: &mut seed::Rng) -> Vec<Vec<f64>> {
    let members = leaf_members(forest, real);
    let mut leaf_of: Vec<Vec<usize>> = vec![vec![0; real.n_rows]; members.len()];
    for (t, leaves) in members.iter().enumerate() {
        for (j, (_, rows)) in leaves.iter().enumerate() {
            for &r in rows {
                leaf_of[t][r] = j;
            }
        }
    }
    let mut out = vec![Vec::with_capacity(m); real.n_features()];
    for _ in 0..m {
        let t = rng.random_range(0..members.len());
        let anchor = rng.random_range(0..real.n_rows);
        let rows = &members[t][leaf_of[t][anchor]].1;
        for (f, col) in out.iter_mut().enumerate() {
            col.push(real.columns[f][rows[rng.random_range(0..rows.len())]]);
        }
    }
    out
}

/// Fit per-leaf product densities to the real rows.
fn forde(forest: &Forest, real: &FeatureMatrix) -> ArfModel {
    let n = real.n_rows as f64;
    let t = forest.trees.len() as f64;
    let ranges: Vec<(f64, f64)> = real
        .columns
        .iter()
        .map(|c| c.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v))))
        .collect();
    let members = leaf_members(forest, real);
    let mut leaves = Vec::new();
    for (tree, tree_leaves) in forest.trees.iter().zip(&members) {
        let parents = tree.parents();
        for (node, rows) in tree_leaves {
            // constraints along the root path
            let mut lo: Vec<f64> = ranges.iter().map(|r| r.0).collect();
            let mut hi: Vec<f64> = ranges.iter().map(|r| r.1).collect();
            let mut allowed: Vec<Vec<bool>> = real
                .kinds
                .iter()
                .map(|k| match k {
                    FeatureKind::Categorical { levels } => vec![true; *levels],
                    FeatureKind::Numeric => Vec::new(),
                })
                .collect();
            let mut cur = *node;
            while let Some((parent, is_left)) = parents[cur] {
                if let Node::Split { feature, rule, .. } = &tree.nodes[parent] {
                    match rule {
                        SplitRule::Threshold(th) => {
                            if is_left {
                                hi[*feature] = hi[*feature].min(*th);
                            } else {
                                lo[*feature] = lo[*feature].max(*th);
                            }
                        }
                        SplitRule::Categories(set) => {
                            for (l, a) in allowed[*feature].iter_mut().enumerate() {
                                let in_set = set.binary_search(&(l as u32)).is_ok();
                                if in_set != is_left {
                                    *a = false;
                                }
                            }
                        }
                    }
                }
                cur = parent;
            }
            let dists = real
                .kinds
                .iter()
                .enumerate()
                .map(|(f, kind)| {
                    let vals = rows.iter().map(|&r| real.columns[f][r]);
                    match kind {
                        FeatureKind::Numeric => {
                            let k = rows.len() as f64;
                            let mean = vals.clone().sum::<f64>() / k;
                            let sd = if rows.len() > 1 {
                                (vals.map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
                            } else {
                                0.0
                            };
                            LeafDist::Normal {
                                mean,
                                sd,
                                lo: lo[f],
                                hi: hi[f],
                            }
                        }
                        FeatureKind::Categorical { levels } => {
                            let mut counts = vec![0.0; *levels];
                            for v in vals {
                                counts[v as usize] += 1.0;
                            }
                            let n_allowed = allowed[f].iter().filter(|&&a| a).count() as f64;
                            let denom = rows.len() as f64 + n_allowed;
                            let probs = counts
                                .iter()
                                .zip(&allowed[f])
                                .map(|(c, &a)| if a { (c + 1.0) / denom } else { 0.0 })
                                .collect();
                            LeafDist::Categorical { probs }
                        }
                    }
                })
                .collect();
            leaves.push(ArfLeaf {
                weight: rows.len() as f64 / (n * t),
                dists,
            });
        }
    }
    let mut acc = 0.0;
    let cumulative = leaves
        .iter()
        .map(|l| {
            acc += l.weight;
            acc
        })
        .collect();
    ArfModel { leaves, cumulative }
}

fn draw_categorical(probs: &[f64], rng: &mut seed::Rng) -> usize {
    let u: f64 = rng.random::<f64>() * probs.iter().sum::<f64>();
    let mut acc = 0.0;
    let mut last = 0;
    for (k, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = k;
            if u < acc {
                return k;
            }
        }
    }
    last
}

/// Inverse-CDF draw from a normal truncated to `[lo, hi]`.
pub fn truncated_normal(mean: f64, sd: f64, lo: f64, hi: f64, rng: &mut seed::Rng) -> f64 {
    if !(sd > 0.0) {
        return mean.clamp(lo, hi);
    }
    let std = Normal::standard();
    let a = std.cdf((lo - mean) / sd);
    let b = std.cdf((hi - mean) / sd);
    if !(b - a > 1e-12) {
        return mean.clamp(lo, hi);
    }
    let u = a + rng.random::<f64>() * (b - a);
    (mean + sd * std.inverse_cdf(u.clamp(1e-300, 1.0 - 1e-16))).clamp(lo, hi)
}

impl ArfModel {
    pub(crate) fn sample(&self, m: usize, rng: &mut seed::Rng) -> Vec<f64> {
        let total = *self.cumulative.last().unwrap_or(&0.0);
        let mut out = Vec::with_capacity(m * self.leaves.first().map_or(0, |l| l.dists.len()));
        for _ in 0..m {
            let u = rng.random::<f64>() * total;
            let i = self.cumulative.partition_point(|&c| c <= u).min(self.leaves.len() - 1);
            for d in &self.leaves[i].dists {
                out.push(match d {
                    LeafDist::Normal { mean, sd, lo, hi } => truncated_normal(*mean, *sd, *lo, *hi, rng),
                    LeafDist::Categorical { probs } => draw_categorical(probs, rng) as f64,
                });
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{Cohort, CohortSchema, ColumnSpec};
    use crate::syngen::sample;

    fn uniform_table(n: usize, seed: u64) -> ImputedTable {
        let mut rng = seed::rng(seed);
        let schema = CohortSchema::new(vec![ColumnSpec::numeric("u"), ColumnSpec::binary("g")], vec![], None).unwrap();
        let values: Vec<f64> = (0..n)
            .flat_map(|_| [rng.random::<f64>(), f64::from(rng.random_bool(0.3))])
            .collect();
        ImputedTable::from_complete(Cohort::from_values(schema, n, values).unwrap()).unwrap()
    }

    #[test]
    fn independent_data_converges_quickly() {
        let g = fit_arf(&uniform_table(400, 1), 2).unwrap();
        match &g.diagnostics {
            Diagnostics::Arf {
                rounds,
                oob_accuracy,
                converged,
            } => {
                assert!(*converged);
                assert!(*rounds <= 2);
                assert!(*oob_accuracy.last().unwrap() < 0.55);
            }
            d => panic!("{d:?}"),
        }
        let model = g.arf_model().unwrap();
        let w: f64 = model.leaves.iter().map(|l| l.weight).sum();
        assert!((w - 1.0).abs() < 1e-9);
    }

    #[test]
    fn samples_conform_and_are_deterministic() {
        let g = fit_arf(&uniform_table(200, 3), 4).unwrap();
        let s = sample(&g, 300, 9).unwrap();
        assert_eq!(s.n_rows(), 300);
        for r in 0..300 {
            let u = s.cohort().value(r, 0);
            assert!((0.0..=1.0).contains(&u));
            assert!([0.0, 1.0].contains(&s.cohort().value(r, 1)));
        }
        assert_eq!(s, sample(&g, 300, 9).unwrap());
        let prefix = sample(&g, 100, 9).unwrap();
        assert_eq!(prefix.cohort().values(), &s.cohort().values()[..200]);
        assert_eq!(sample(&g, 0, 1).unwrap().n_rows(), 0);
    }

    #[test]
    fn too_few_rows() {
        assert!(fit_arf(&uniform_table(10, 1), 1).is_err());
    }

    #[test]
    fn truncated_normal_stays_in_bounds() {
        let mut rng = seed::rng(0);
        for _ in 0..1000 {
            let v = truncated_normal(0.0, 1.0, 2.0, 2.5, &mut rng);
            assert!((2.0..=2.5).contains(&v));
        }
        assert_eq!(truncated_normal(3.0, 0.0, 0.0, 1.0, &mut rng), 1.0);
    }
}
