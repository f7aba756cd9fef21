//! Binary decision trees with numeric thresholds and native categorical
//! subset splits, plus a CART grower (Gini / squared error) used by the
//! random forests.

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::features::{FeatureKind, FeatureMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SplitRule {
    /// `x <= threshold` goes left.
    Threshold(f64),
    /// Category indices (sorted) that go left; everything else goes right.
    Categories(Vec<u32>),
}

impl SplitRule {
    #[inline]
    pub fn goes_left(&self, x: f64) -> bool {
        match self {
            SplitRule::Threshold(t) => x <= *t,
            SplitRule::Categories(set) => set.binary_search(&(x as u32)).is_ok(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node<L> {
    Split {
        feature: usize,
        rule: SplitRule,
        left: usize,
        right: usize,
    },
    Leaf(L),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree<L> {
    pub nodes: Vec<Node<L>>,
}

impl<L> Tree<L> {
    /// Node index of the leaf reached by `x`, where `x(f)` reads feature `f`.
    #[inline]
    pub fn leaf_index(&self, x: impl Fn(usize) -> f64) -> usize {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf(_) => return i,
                Node::Split {
                    feature,
                    rule,
                    left,
                    right,
                } => i = if rule.goes_left(x(*feature)) { *left } else { *right },
            }
        }
    }

    #[inline]
    pub fn leaf(&self, x: impl Fn(usize) -> f64) -> &L {
        match &self.nodes[self.leaf_index(x)] {
            Node::Leaf(l) => l,
            Node::Split { .. } => unreachable!(),
        }
    }

    pub fn leaf_of_row(&self, m: &FeatureMatrix, r: usize) -> &L {
        self.leaf(|f| m.columns[f][r])
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf(_))).count()
    }

    /// Depth of the deepest leaf (root alone has depth 0).
    pub fn depth(&self) -> usize {
        fn go<L>(t: &Tree<L>, i: usize) -> usize {
            match &t.nodes[i] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + go(t, *left).max(go(t, *right)),
            }
        }
        go(self, 0)
    }

    /// Parent index and direction for every node; the root maps to `None`.
    pub fn parents(&self) -> Vec<Option<(usize, bool)>> {
        let mut parents = vec![None; self.nodes.len()];
        for (i, n) in self.nodes.iter().enumerate() {
            if let Node::Split { left, right, .. } = n {
                parents[*left] = Some((i, true));
                parents[*right] = Some((i, false));
            }
        }
        parents
    }
}

/// Leaf statistics of a CART tree: class frequencies (classification) or a
/// single mean (regression), and the number of training rows reaching it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CartLeaf {
    pub value: Vec<f64>,
    pub n: usize,
}

#[derive(Debug, Clone, Copy)]
pub enum CartTarget<'a> {
    Classes { labels: &'a [usize], n_classes: usize },
    Regression(&'a [f64]),
}

#[derive(Debug, Clone, Copy)]
pub struct CartParams {
    /// Features tried per split.
    pub mtry: usize,
    pub max_depth: usize,
    /// Nodes with fewer rows are not split.
    pub min_split: usize,
    /// Minimum rows in each child.
    pub min_leaf: usize,
}

impl Default for CartParams {
    fn default() -> Self {
        CartParams {
            mtry: usize::MAX,
            max_depth: usize::MAX,
            min_split: 2,
            min_leaf: 1,
        }
    }
}

struct Best {
    score: f64,
    feature: usize,
    rule: SplitRule,
}

struct Grower<'a, R: Rng> {
    x: &'a FeatureMatrix,
    target: CartTarget<'a>,
    params: CartParams,
    rng: &'a mut R,
    nodes: Vec<Node<CartLeaf>>,
    // scratch
    pairs: Vec<(f64, u32)>,
}

/// Grow one CART tree on `rows` (duplicates allowed, as in a bootstrap sample).
pub fn grow_cart<R: Rng>(
    x: &FeatureMatrix,
    target: CartTarget<'_>,
    rows: Vec<usize>,
    params: CartParams,
    rng: &mut R,
) -> Tree<CartLeaf> {
    let mut g = Grower {
        x,
        target,
        params,
        rng,
        nodes: Vec::new(),
        pairs: Vec::new(),
    };
    let mut rows = rows;
    g.build(&mut rows, 0);
    Tree { nodes: g.nodes }
}

impl<R: Rng> Grower<'_, R> {
    fn leaf_stats(&self, rows: &[usize]) -> CartLeaf {
        let n = rows.len();
        let value = match self.target {
            CartTarget::Classes { labels, n_classes } => {
                let mut counts = vec![0.0; n_classes];
                for &r in rows {
                    counts[labels[r]] += 1.0;
                }
                if n > 0 {
                    counts.iter_mut().for_each(|c| *c /= n as f64);
                }
                counts
            }
            CartTarget::Regression(y) => {
                let s: f64 = rows.iter().map(|&r| y[r]).sum();
                vec![if n > 0 { s / n as f64 } else { 0.0 }]
            }
        };
        CartLeaf { value, n }
    }

    fn is_pure(&self, rows: &[usize]) -> bool {
        match self.target {
            CartTarget::Classes { labels, .. } => rows.iter().all(|&r| labels[r] == labels[rows[0]]),
            CartTarget::Regression(y) => rows.iter().all(|&r| y[r] == y[rows[0]]),
        }
    }

    fn build(&mut self, rows: &mut [usize], depth: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf(CartLeaf { value: vec![], n: 0 }));
        let p = self.params;
        let splittable = rows.len() >= p.min_split.max(2)
            && rows.len() >= 2 * p.min_leaf.max(1)
            && depth < p.max_depth
            && !self.is_pure(rows);
        let best = if splittable { self.best_split(rows) } else { None };
        match best {
            None => {
                self.nodes[id] = Node::Leaf(self.leaf_stats(rows));
            }
            Some(best) => {
                let col = &self.x.columns[best.feature];
                let mut i = 0;
                let mut j = rows.len();
                while i < j {
                    if best.rule.goes_left(col[rows[i]]) {
                        i += 1;
                    } else {
                        j -= 1;
                        rows.swap(i, j);
                    }
                }
                let (l, r) = rows.split_at_mut(i);
                let left = self.build(l, depth + 1);
                let right = self.build(r, depth + 1);
                self.nodes[id] = Node::Split {
                    feature: best.feature,
                    rule: best.rule,
                    left,
                    right,
                };
            }
        }
        id
    }

    fn best_split(&mut self, rows: &[usize]) -> Option<Best> {
        let p = self.x.n_features();
        let mtry = self.params.mtry.clamp(1, p);
        let features = sample_indices(self.rng, p, mtry);
        let parent = self.parent_score(rows);
        let mut best: Option<Best> = None;
        for f in features.iter() {
            let cand = match self.x.kinds[f] {
                FeatureKind::Numeric => self.numeric_split(rows, f),
                FeatureKind::Categorical { levels } => self.categorical_split(rows, f, levels),
            };
            if let Some((score, rule)) = cand {
                if score > parent + 1e-10 * parent.abs().max(1.0)
                    && best.as_ref().is_none_or(|b| score > b.score)
                {
                    best = Some(Best {
                        score,
                        feature: f,
                        rule,
                    });
                }
            }
        }
        best
    }

    /// Split objective of the unsplit node (higher is better).
    fn parent_score(&self, rows: &[usize]) -> f64 {
        let n = rows.len() as f64;
        match self.target {
            CartTarget::Classes { labels, n_classes } => {
                let mut c = vec![0.0; n_classes];
                for &r in rows {
                    c[labels[r]] += 1.0;
                }
                c.iter().map(|v| v * v).sum::<f64>() / n
            }
            CartTarget::Regression(y) => {
                let s: f64 = rows.iter().map(|&r| y[r]).sum();
                s * s / n
            }
        }
    }

    fn numeric_split(&mut self, rows: &[usize], f: usize) -> Option<(f64, SplitRule)> {
        let col = &self.x.columns[f];
        self.pairs.clear();
        self.pairs.extend(rows.iter().map(|&r| (col[r], r as u32)));
        self.pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        let pairs = &self.pairs;
        let n = pairs.len();
        if pairs[0].0 == pairs[n - 1].0 {
            return None;
        }
        let min_leaf = self.params.min_leaf.max(1);
        let mut best: Option<(f64, usize)> = None;
        match self.target {
            CartTarget::Classes { labels, n_classes } => {
                let mut total = vec![0.0f64; n_classes];
                for &(_, r) in pairs {
                    total[labels[r as usize]] += 1.0;
                }
                let mut left = vec![0.0; n_classes];
                let mut sq_l = 0.0;
                let mut sq_r: f64 = total.iter().map(|v| v * v).sum();
                for i in 0..n - 1 {
                    let k = labels[pairs[i].1 as usize];
                    // update sums of squared counts incrementally
                    sq_l += 2.0 * left[k] + 1.0;
                    let right_k = total[k] - left[k];
                    sq_r -= 2.0 * right_k - 1.0;
                    left[k] += 1.0;
                    let nl = i + 1;
                    if pairs[i].0 == pairs[i + 1].0 || nl < min_leaf || n - nl < min_leaf {
                        continue;
                    }
                    let score = sq_l / nl as f64 + sq_r / (n - nl) as f64;
                    if best.is_none_or(|(b, _)| score > b) {
                        best = Some((score, i));
                    }
                }
            }
            CartTarget::Regression(y) => {
                let total: f64 = pairs.iter().map(|&(_, r)| y[r as usize]).sum();
                let mut sl = 0.0;
                for i in 0..n - 1 {
                    sl += y[pairs[i].1 as usize];
                    let nl = i + 1;
                    if pairs[i].0 == pairs[i + 1].0 || nl < min_leaf || n - nl < min_leaf {
                        continue;
                    }
                    let sr = total - sl;
                    let score = sl * sl / nl as f64 + sr * sr / (n - nl) as f64;
                    if best.is_none_or(|(b, _)| score > b) {
                        best = Some((score, i));
                    }
                }
            }
        }
        best.map(|(score, i)| {
            let t = 0.5 * (pairs[i].0 + pairs[i + 1].0);
            // midpoint can round up to the right value for adjacent floats
            let t = if t >= pairs[i + 1].0 { pairs[i].0 } else { t };
            (score, SplitRule::Threshold(t))
        })
    }

    fn categorical_split(&mut self, rows: &[usize], f: usize, levels: usize) -> Option<(f64, SplitRule)> {
        let col = &self.x.columns[f];
        let min_leaf = self.params.min_leaf.max(1) as f64;
        let mut count = vec![0.0f64; levels];
        match self.target {
            CartTarget::Classes { labels, n_classes } => {
                let mut stats = vec![vec![0.0f64; n_classes]; levels];
                let mut total = vec![0.0f64; n_classes];
                for &r in rows {
                    let l = col[r] as usize;
                    stats[l][labels[r]] += 1.0;
                    total[labels[r]] += 1.0;
                    count[l] += 1.0;
                }
                // Order levels by the frequency of the node's majority class;
                // exact for two classes.
                let major = (0..n_classes)
                    .max_by(|&a, &b| total[a].total_cmp(&total[b]).then(b.cmp(&a)))
                    .unwrap();
                let mut present: Vec<usize> = (0..levels).filter(|&l| count[l] > 0.0).collect();
                if present.len() < 2 {
                    return None;
                }
                present.sort_by(|&a, &b| {
                    (stats[a][major] / count[a])
                        .total_cmp(&(stats[b][major] / count[b]))
                        .then(a.cmp(&b))
                });
                let n = rows.len() as f64;
                let mut left = vec![0.0; n_classes];
                let mut nl = 0.0;
                let mut best: Option<(f64, usize)> = None;
                for (i, &l) in present.iter().enumerate().take(present.len() - 1) {
                    for k in 0..n_classes {
                        left[k] += stats[l][k];
                    }
                    nl += count[l];
                    if nl < min_leaf || n - nl < min_leaf {
                        continue;
                    }
                    let sq_l: f64 = left.iter().map(|v| v * v).sum();
                    let sq_r: f64 = left.iter().zip(&total).map(|(a, t)| (t - a) * (t - a)).sum();
                    let score = sq_l / nl + sq_r / (n - nl);
                    if best.is_none_or(|(b, _)| score > b) {
                        best = Some((score, i));
                    }
                }
                best.map(|(s, i)| (s, categories_rule(&present[..=i])))
            }
            CartTarget::Regression(y) => {
                let mut sum = vec![0.0; levels];
                for &r in rows {
                    let l = col[r] as usize;
                    sum[l] += y[r];
                    count[l] += 1.0;
                }
                let mut present: Vec<usize> = (0..levels).filter(|&l| count[l] > 0.0).collect();
                if present.len() < 2 {
                    return None;
                }
                present.sort_by(|&a, &b| (sum[a] / count[a]).total_cmp(&(sum[b] / count[b])).then(a.cmp(&b)));
                let n = rows.len() as f64;
                let total: f64 = sum.iter().sum();
                let (mut sl, mut nl) = (0.0, 0.0);
                let mut best: Option<(f64, usize)> = None;
                for (i, &l) in present.iter().enumerate().take(present.len() - 1) {
                    sl += sum[l];
                    nl += count[l];
                    if nl < min_leaf || n - nl < min_leaf {
                        continue;
                    }
                    let sr = total - sl;
                    let score = sl * sl / nl + sr * sr / (n - nl);
                    if best.is_none_or(|(b, _)| score > b) {
                        best = Some((score, i));
                    }
                }
                best.map(|(s, i)| (s, categories_rule(&present[..=i])))
            }
        }
    }
}

pub(crate) fn categories_rule(levels: &[usize]) -> SplitRule {
    let mut set: Vec<u32> = levels.iter().map(|&l| l as u32).collect();
    set.sort_unstable();
    SplitRule::Categories(set)
}

/// Default feature-subsample size: `floor(sqrt(p))`, at least 1.
pub fn sqrt_mtry(p: usize) -> usize {
    ((p as f64).sqrt().floor() as usize).max(1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    #[test]
    fn numeric_threshold_separates_classes() {
        let x = FeatureMatrix::new(vec![vec![1.0, 2.0, 3.0, 10.0, 11.0, 12.0]], vec![FeatureKind::Numeric]);
        let labels = [0, 0, 0, 1, 1, 1];
        let tree = grow_cart(
            &x,
            CartTarget::Classes { labels: &labels, n_classes: 2 },
            (0..6).collect(),
            CartParams::default(),
            &mut seed::rng(1),
        );
        assert_eq!(tree.n_leaves(), 2);
        match &tree.nodes[0] {
            Node::Split { rule: SplitRule::Threshold(t), .. } => assert_eq!(*t, 6.5),
            n => panic!("{n:?}"),
        }
        assert_eq!(tree.leaf(|_| 2.5).value, vec![1.0, 0.0]);
        assert_eq!(tree.leaf(|_| 11.0).value, vec![0.0, 1.0]);
    }

    #[test]
    fn categorical_subset_split() {
        // levels 0 and 2 are events, 1 and 3 are not
        let col: Vec<f64> = (0..40).map(|i| (i % 4) as f64).collect();
        let labels: Vec<usize> = (0..40).map(|i| usize::from(i % 2 == 0)).collect();
        let x = FeatureMatrix::new(vec![col], vec![FeatureKind::Categorical { levels: 4 }]);
        let tree = grow_cart(
            &x,
            CartTarget::Classes { labels: &labels, n_classes: 2 },
            (0..40).collect(),
            CartParams::default(),
            &mut seed::rng(1),
        );
        assert_eq!(tree.n_leaves(), 2);
        match &tree.nodes[0] {
            Node::Split { rule: SplitRule::Categories(set), .. } => {
                assert!(set == &vec![1, 3] || set == &vec![0, 2])
            }
            n => panic!("{n:?}"),
        }
    }

    #[test]
    fn respects_depth_and_leaf_limits() {
        let n = 200;
        let col: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let y: Vec<f64> = (0..n).map(|i| ((i * 37) % 11) as f64).collect();
        let x = FeatureMatrix::new(vec![col], vec![FeatureKind::Numeric]);
        let params = CartParams {
            max_depth: 3,
            min_leaf: 10,
            ..CartParams::default()
        };
        let tree = grow_cart(&x, CartTarget::Regression(&y), (0..n).collect(), params, &mut seed::rng(2));
        assert!(tree.depth() <= 3);
        for node in &tree.nodes {
            if let Node::Leaf(l) = node {
                assert!(l.n >= 10);
            }
        }
    }
}
