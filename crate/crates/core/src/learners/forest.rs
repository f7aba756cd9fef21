//! Bagged CART forests (classification and regression).

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::features::FeatureMatrix;
use super::tree::{grow_cart, CartLeaf, CartParams, CartTarget, Tree};
use crate::{seed, subseed};

#[derive(Debug, Clone, Copy)]
pub struct ForestParams {
    pub n_trees: usize,
    pub cart: CartParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<Tree<CartLeaf>>,
    /// Output width: class count, or 1 for regression.
    pub width: usize,
}

/// Per-row out-of-bag average of member-tree leaf values; `None` for rows
/// that were in every bootstrap sample.
pub type OobPredictions = Vec<Option<Vec<f64>>>;

fn bootstrap(n: usize, rng: &mut impl Rng) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

/// Fit a forest; tree `t` draws from `subseed!(seed, "tree", t)` so results
/// are independent of thread scheduling.
pub fn fit_forest(x: &FeatureMatrix, target: CartTarget<'_>, params: &ForestParams, seed: u64) -> Forest {
    fit_forest_impl(x, target, params, seed, false).0
}

pub fn fit_forest_with_oob(
    x: &FeatureMatrix,
    target: CartTarget<'_>,
    params: &ForestParams,
    seed: u64,
) -> (Forest, OobPredictions) {
    let (f, oob) = fit_forest_impl(x, target, params, seed, true);
    (f, oob.expect("requested"))
}

fn fit_forest_impl(
    x: &FeatureMatrix,
    target: CartTarget<'_>,
    params: &ForestParams,
    seed: u64,
    want_oob: bool,
) -> (Forest, Option<OobPredictions>) {
    let n = x.n_rows;
    let width = match target {
        CartTarget::Classes { n_classes, .. } => n_classes,
        CartTarget::Regression(_) => 1,
    };
    let grown: Vec<(Tree<CartLeaf>, Vec<usize>)> = (0..params.n_trees.max(1))
        .into_par_iter()
        .map(|t| {
            let mut rng = seed::rng(subseed!(seed, "tree", t));
            let rows = bootstrap(n, &mut rng);
            let in_bag = if want_oob { rows.clone() } else { Vec::new() };
            (grow_cart(x, target, rows, params.cart, &mut rng), in_bag)
        })
        .collect();

    let oob = want_oob.then(|| {
        let mut sums = vec![vec![0.0; width]; n];
        let mut counts = vec![0usize; n];
        let mut in_bag = vec![false; n];
        for (tree, rows) in &grown {
            in_bag.iter_mut().for_each(|b| *b = false);
            for &r in rows {
                in_bag[r] = true;
            }
            for r in (0..n).filter(|&r| !in_bag[r]) {
                let leaf = tree.leaf_of_row(x, r);
                for (s, v) in sums[r].iter_mut().zip(&leaf.value) {
                    *s += v;
                }
                counts[r] += 1;
            }
        }
        sums.into_iter()
            .zip(counts)
            .map(|(s, c)| (c > 0).then(|| s.into_iter().map(|v| v / c as f64).collect()))
            .collect()
    });
    let forest = Forest {
        trees: grown.into_iter().map(|(t, _)| t).collect(),
        width,
    };
    (forest, oob)
}

impl Forest {
    /// Mean of member-tree leaf values for one row.
    pub fn predict_with(&self, x: impl Fn(usize) -> f64 + Copy) -> Vec<f64> {
        let mut out = vec![0.0; self.width];
        for tree in &self.trees {
            for (o, v) in out.iter_mut().zip(&tree.leaf(x).value) {
                *o += v;
            }
        }
        let t = self.trees.len() as f64;
        out.iter_mut().for_each(|o| *o /= t);
        out
    }

    pub fn predict_row(&self, m: &FeatureMatrix, r: usize) -> Vec<f64> {
        self.predict_with(|f| m.columns[f][r])
    }

    pub fn predict(&self, m: &FeatureMatrix) -> Vec<Vec<f64>> {
        (0..m.n_rows).map(|r| self.predict_row(m, r)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::features::FeatureKind;
    use crate::learners::tree::Node;

    fn toy() -> (FeatureMatrix, Vec<usize>) {
        let a: Vec<f64> = (0..60).map(|i| (i % 10) as f64).collect();
        let b: Vec<f64> = (0..60).map(|i| ((i * 7) % 3) as f64).collect();
        let labels = (0..60).map(|i| usize::from(i % 10 >= 5 || i % 7 == 0)).collect();
        (
            FeatureMatrix::new(vec![a, b], vec![FeatureKind::Numeric, FeatureKind::Categorical { levels: 3 }]),
            labels,
        )
    }

    #[test]
    fn probability_is_mean_of_tree_leaf_fractions() {
        let (x, labels) = toy();
        let params = ForestParams {
            n_trees: 3,
            cart: CartParams {
                mtry: 1,
                min_leaf: 3,
                ..CartParams::default()
            },
        };
        let forest = fit_forest(&x, CartTarget::Classes { labels: &labels, n_classes: 2 }, &params, 9);
        for r in 0..x.n_rows {
            // walk each tree by hand
            let mut brute = 0.0;
            for tree in &forest.trees {
                let mut i = 0;
                let leaf = loop {
                    match &tree.nodes[i] {
                        Node::Leaf(l) => break l,
                        Node::Split { feature, rule, left, right } => {
                            i = if rule.goes_left(x.columns[*feature][r]) { *left } else { *right }
                        }
                    }
                };
                brute += leaf.value[1];
            }
            let p = forest.predict_row(&x, r)[1];
            assert!((p - brute / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic_and_oob_covers_rows() {
        let (x, labels) = toy();
        let params = ForestParams {
            n_trees: 25,
            cart: CartParams::default(),
        };
        let t = CartTarget::Classes { labels: &labels, n_classes: 2 };
        let (f1, oob) = fit_forest_with_oob(&x, t, &params, 4);
        let f2 = fit_forest(&x, t, &params, 4);
        assert_eq!(f1, f2);
        assert!(oob.iter().filter(|o| o.is_some()).count() > 55);
    }
}
