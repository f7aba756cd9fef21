//! Histogram gradient boosting for binary log-loss, with leaf-wise
//! (LightGBM-style) and depth-wise (XGBoost-style) tree growth.

use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::features::{FeatureKind, FeatureMatrix};
use super::tree::{categories_rule, Node, SplitRule, Tree};
use crate::error::{Error, Result};
use crate::{seed, subseed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GrowPolicy {
    LeafWise,
    DepthWise,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbtParams {
    pub policy: GrowPolicy,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub max_leaves: usize,
    pub min_data_in_leaf: usize,
    pub min_child_weight: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub goss: bool,
    pub goss_top_rate: f64,
    pub goss_other_rate: f64,
    pub early_stopping_rounds: usize,
    pub max_rounds: usize,
    pub validation_fraction: f64,
    pub max_bin: usize,
}

impl GbtParams {
    pub fn leaf_wise() -> Self {
        GbtParams {
            policy: GrowPolicy::LeafWise,
            learning_rate: 0.3,
            max_depth: 6,
            max_leaves: 15,
            min_data_in_leaf: 10,
            min_child_weight: 1e-3,
            lambda: 0.0,
            gamma: 0.0,
            goss: false,
            goss_top_rate: 0.2,
            goss_other_rate: 0.1,
            early_stopping_rounds: 7,
            max_rounds: 100,
            validation_fraction: 0.1,
            max_bin: 255,
        }
    }

    pub fn depth_wise() -> Self {
        GbtParams {
            policy: GrowPolicy::DepthWise,
            min_data_in_leaf: 1,
            min_child_weight: 1.0,
            lambda: 1.0,
            ..Self::leaf_wise()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub base_score: f64,
    pub trees: Vec<Tree<f64>>,
    /// Internal-validation log-loss after each round (empty without early stopping).
    pub validation_loss: Vec<f64>,
}

impl GbtModel {
    pub fn raw_score(&self, x: impl Fn(usize) -> f64 + Copy) -> f64 {
        self.base_score + self.trees.iter().map(|t| *t.leaf(x)).sum::<f64>()
    }

    pub fn predict_proba(&self, m: &FeatureMatrix) -> Vec<f64> {
        (0..m.n_rows)
            .map(|r| sigmoid(self.raw_score(|f| m.columns[f][r])))
            .collect()
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn log_loss(y: &[f64], raw: &[f64]) -> f64 {
    let s: f64 = y
        .iter()
        .zip(raw)
        .map(|(&yi, &z)| {
            // log(1 + e^z) - y z, computed stably
            let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
            softplus - yi * z
        })
        .sum();
    s / y.len().max(1) as f64
}

/// Per-feature bin boundaries.
struct Binner {
    /// Numeric: upper thresholds of every bin but the last. Empty for categoricals.
    thresholds: Vec<Vec<f64>>,
    n_bins: Vec<usize>,
}

impl Binner {
    fn fit(x: &FeatureMatrix, rows: &[usize], max_bin: usize) -> Self {
        let mut thresholds = Vec::with_capacity(x.n_features());
        let mut n_bins = Vec::with_capacity(x.n_features());
        for (col, kind) in x.columns.iter().zip(&x.kinds) {
            match kind {
                FeatureKind::Categorical { levels } => {
                    thresholds.push(Vec::new());
                    n_bins.push(*levels);
                }
                FeatureKind::Numeric => {
                    let mut v: Vec<f64> = rows.iter().map(|&r| col[r]).collect();
                    v.sort_unstable_by(f64::total_cmp);
                    v.dedup();
                    let cuts: Vec<f64> = if v.len() <= max_bin {
                        v.windows(2).map(|w| midpoint(w[0], w[1])).collect()
                    } else {
                        let mut c: Vec<f64> = (1..max_bin)
                            .map(|b| {
                                let i = b * v.len() / max_bin;
                                midpoint(v[i - 1], v[i])
                            })
                            .collect();
                        c.dedup();
                        c
                    };
                    n_bins.push(cuts.len() + 1);
                    thresholds.push(cuts);
                }
            }
        }
        Binner { thresholds, n_bins }
    }

    fn bin(&self, f: usize, v: f64) -> u16 {
        let t = &self.thresholds[f];
        if t.is_empty() {
            return if self.n_bins[f] > 1 { v as u16 } else { 0 };
        }
        // first threshold >= v
        t.partition_point(|&c| c < v) as u16
    }
}

fn midpoint(a: f64, b: f64) -> f64 {
    let m = 0.5 * (a + b);
    if m >= b {
        a
    } else {
        m
    }
}

#[derive(Clone, Copy, Default)]
struct Bin {
    g: f64,
    h: f64,
    n: u32,
}

/// Bins of every feature, concatenated; feature `f` owns
/// `offsets[f]..offsets[f + 1]`.
type Histogram = Vec<Bin>;

struct Candidate {
    node: usize,
    rows: Vec<u32>,
    depth: usize,
    hist: Histogram,
    g: f64,
    h: f64,
    split: Option<SplitChoice>,
}

#[derive(Clone)]
struct SplitChoice {
    gain: f64,
    feature: usize,
    rule: SplitRule,
    /// bins (of `feature`) that go left
    left_bins: Vec<bool>,
}

struct Booster<'a> {
    p: &'a GbtParams,
    kinds: &'a [FeatureKind],
    bins: &'a [Vec<u16>],
    binner: &'a Binner,
    offsets: Vec<usize>,
}

impl Booster<'_> {
    fn histogram(&self, rows: &[u32], grad: &[f64], hess: &[f64]) -> Histogram {
        let mut h = vec![Bin::default(); *self.offsets.last().unwrap_or(&0)];
        for (col, &off) in self.bins.iter().zip(&self.offsets) {
            for &r in rows {
                let b = &mut h[off + col[r as usize] as usize];
                b.g += grad[r as usize];
                b.h += hess[r as usize];
                b.n += 1;
            }
        }
        h
    }

    fn feature_bins<'h>(&self, hist: &'h [Bin], f: usize) -> &'h [Bin] {
        &hist[self.offsets[f]..self.offsets[f + 1]]
    }

    fn leaf_score(&self, g: f64, h: f64) -> f64 {
        g * g / (h + self.p.lambda)
    }

    fn split_gain(&self, gl: f64, hl: f64, gr: f64, hr: f64) -> f64 {
        0.5 * (self.leaf_score(gl, hl) + self.leaf_score(gr, hr) - self.leaf_score(gl + gr, hl + hr))
            - self.p.gamma
    }

    fn admissible(&self, nl: u32, hl: f64, nr: u32, hr: f64) -> bool {
        let m = self.p.min_data_in_leaf.max(1) as u32;
        nl >= m && nr >= m && hl >= self.p.min_child_weight && hr >= self.p.min_child_weight
    }

    fn best_split(&self, hist: &Histogram, g: f64, h: f64, n: u32) -> Option<SplitChoice> {
        let m = self.p.min_data_in_leaf.max(1) as u32;
        if n < 2 * m {
            return None;
        }
        let mut best: Option<SplitChoice> = None;
        let mut consider = |gain: f64, feature: usize, rule: SplitRule, left_bins: Vec<bool>| {
            if gain > 1e-12 && best.as_ref().is_none_or(|b| gain > b.gain) {
                best = Some(SplitChoice {
                    gain,
                    feature,
                    rule,
                    left_bins,
                });
            }
        };
        for f in 0..self.kinds.len() {
            let fh = self.feature_bins(hist, f);
            match self.kinds[f] {
                FeatureKind::Numeric => {
                    let (mut gl, mut hl, mut nl) = (0.0, 0.0, 0u32);
                    let mut best_here: Option<(f64, usize)> = None;
                    for (b, bin) in fh.iter().enumerate().take(fh.len().saturating_sub(1)) {
                        gl += bin.g;
                        hl += bin.h;
                        nl += bin.n;
                        if n - nl < m {
                            break;
                        }
                        if bin.n == 0 || !self.admissible(nl, hl, n - nl, h - hl) {
                            continue;
                        }
                        let gain = self.split_gain(gl, hl, g - gl, h - hl);
                        if best_here.is_none_or(|(bg, _)| gain > bg) {
                            best_here = Some((gain, b));
                        }
                    }
                    if let Some((gain, b)) = best_here {
                        let left_bins = (0..fh.len()).map(|i| i <= b).collect();
                        consider(gain, f, SplitRule::Threshold(self.binner.thresholds[f][b]), left_bins);
                    }
                }
                FeatureKind::Categorical { .. } => {
                    let mut present: Vec<usize> = (0..fh.len()).filter(|&b| fh[b].n > 0).collect();
                    if present.len() < 2 {
                        continue;
                    }
                    present.sort_by(|&a, &b| {
                        let ra = fh[a].g / (fh[a].h + self.p.lambda + 1e-12);
                        let rb = fh[b].g / (fh[b].h + self.p.lambda + 1e-12);
                        ra.partial_cmp(&rb).unwrap_or(Ordering::Equal).then(a.cmp(&b))
                    });
                    let (mut gl, mut hl, mut nl) = (0.0, 0.0, 0u32);
                    let mut best_here: Option<(f64, usize)> = None;
                    for (i, &b) in present.iter().enumerate().take(present.len() - 1) {
                        gl += fh[b].g;
                        hl += fh[b].h;
                        nl += fh[b].n;
                        if !self.admissible(nl, hl, n - nl, h - hl) {
                            continue;
                        }
                        let gain = self.split_gain(gl, hl, g - gl, h - hl);
                        if best_here.is_none_or(|(bg, _)| gain > bg) {
                            best_here = Some((gain, i));
                        }
                    }
                    if let Some((gain, i)) = best_here {
                        let mut left_bins = vec![false; fh.len()];
                        for &b in &present[..=i] {
                            left_bins[b] = true;
                        }
                        consider(gain, f, categories_rule(&present[..=i]), left_bins);
                    }
                }
            }
        }
        best
    }

    fn candidate(&self, node: usize, rows: Vec<u32>, depth: usize, hist: Histogram) -> Candidate {
        let (g, h, n) = if self.kinds.is_empty() {
            (0.0, 0.0, rows.len() as u32)
        } else {
            self.feature_bins(&hist, 0).iter().fold((0.0, 0.0, 0u32), |a, b| (a.0 + b.g, a.1 + b.h, a.2 + b.n))
        };
        let split = if depth < self.p.max_depth {
            self.best_split(&hist, g, h, n)
        } else {
            None
        };
        Candidate {
            node,
            rows,
            depth,
            hist,
            g,
            h,
            split,
        }
    }

    fn grow(&self, rows: Vec<u32>, grad: &[f64], hess: &[f64]) -> Tree<f64> {
        let mut nodes: Vec<Node<f64>> = vec![Node::Leaf(0.0)];
        let root_hist = self.histogram(&rows, grad, hess);
        let mut open = vec![self.candidate(0, rows, 0, root_hist)];
        let mut n_leaves = 1;
        loop {
            let splittable = open.iter().enumerate().filter(|(_, c)| c.split.is_some());
            let pick = match self.p.policy {
                GrowPolicy::LeafWise => splittable
                    .max_by(|a, b| {
                        let (ga, gb) = (a.1.split.as_ref().unwrap().gain, b.1.split.as_ref().unwrap().gain);
                        ga.partial_cmp(&gb).unwrap_or(Ordering::Equal).then(b.1.node.cmp(&a.1.node))
                    })
                    .map(|(i, _)| i),
                GrowPolicy::DepthWise => splittable
                    .min_by_key(|(_, c)| (c.depth, c.node))
                    .map(|(i, _)| i),
            };
            let Some(i) = pick else { break };
            if n_leaves >= self.p.max_leaves.max(2) {
                break;
            }
            let cand = open.swap_remove(i);
            let split = cand.split.clone().unwrap();
            let col = &self.bins[split.feature];
            let (left_rows, right_rows): (Vec<u32>, Vec<u32>) =
                cand.rows.iter().partition(|&&r| split.left_bins[col[r as usize] as usize]);
            let (small, large_is_left) = if left_rows.len() <= right_rows.len() {
                (&left_rows, false)
            } else {
                (&right_rows, true)
            };
            let small_hist = self.histogram(small, grad, hess);
            let large_hist: Histogram = cand
                .hist
                .iter()
                .zip(&small_hist)
                .map(|(p, s)| Bin {
                    g: p.g - s.g,
                    h: p.h - s.h,
                    n: p.n - s.n,
                })
                .collect();
            let (lh, rh) = if large_is_left {
                (large_hist, small_hist)
            } else {
                (small_hist, large_hist)
            };
            let left = nodes.len();
            nodes.push(Node::Leaf(0.0));
            let right = nodes.len();
            nodes.push(Node::Leaf(0.0));
            nodes[cand.node] = Node::Split {
                feature: split.feature,
                rule: split.rule,
                left,
                right,
            };
            n_leaves += 1;
            open.push(self.candidate(left, left_rows, cand.depth + 1, lh));
            open.push(self.candidate(right, right_rows, cand.depth + 1, rh));
        }
        for c in open {
            nodes[c.node] = Node::Leaf(-self.p.learning_rate * c.g / (c.h + self.p.lambda));
        }
        Tree { nodes }
    }
}

/// Stratified hold-out of `fraction` of the rows for early stopping. Rows
/// sharing a group id (copies of one patient in a bootstrap resample) land
/// on the same side. Returns `None` when the data are too small to spare a
/// validation set.
fn validation_split(y: &[f64], groups: Option<&[u64]>, fraction: f64, rng: &mut impl Rng) -> Option<(Vec<usize>, Vec<usize>)> {
    let n = y.len();
    if fraction <= 0.0 || n < 20 {
        return None;
    }
    // members of each group in first-occurrence order
    let units: Vec<Vec<usize>> = match groups {
        None => (0..n).map(|r| vec![r]).collect(),
        Some(g) => {
            let mut index = std::collections::HashMap::new();
            let mut units: Vec<Vec<usize>> = Vec::new();
            for (r, id) in g.iter().enumerate() {
                let u = *index.entry(id).or_insert_with(|| {
                    units.push(Vec::new());
                    units.len() - 1
                });
                units[u].push(r);
            }
            units
        }
    };
    let mut train = Vec::new();
    let mut valid = Vec::new();
    for class in [0.0, 1.0] {
        let mut members: Vec<&Vec<usize>> = units.iter().filter(|u| y[u[0]] == class).collect();
        members.shuffle(rng);
        let k = (members.len() as f64 * fraction).round() as usize;
        if k == 0 || k == members.len() {
            return None;
        }
        valid.extend(members[..k].iter().flat_map(|u| u.iter().copied()));
        train.extend(members[k..].iter().flat_map(|u| u.iter().copied()));
    }
    train.sort_unstable();
    valid.sort_unstable();
    Some((train, valid))
}

/// Fit a boosted ensemble on binary labels `y` ∈ {0, 1}.
pub fn fit_gbt(x: &FeatureMatrix, y: &[f64], params: &GbtParams, seed: u64) -> Result<GbtModel> {
    fit_gbt_grouped(x, y, None, params, seed)
}

/// [`fit_gbt`] keeping rows with equal `groups` ids together in the
/// early-stopping split.
pub fn fit_gbt_grouped(x: &FeatureMatrix, y: &[f64], groups: Option<&[u64]>, params: &GbtParams, seed: u64) -> Result<GbtModel> {
    let mut rng = seed::rng(subseed!(seed, "gbt", "split"));
    let (train, valid) = validation_split(y, groups, params.validation_fraction, &mut rng)
        .unwrap_or_else(|| ((0..y.len()).collect(), Vec::new()));

    let binner = Binner::fit(x, &train, params.max_bin.max(2));
    let bins: Vec<Vec<u16>> = (0..x.n_features())
        .map(|f| x.columns[f].iter().map(|&v| binner.bin(f, v)).collect())
        .collect();
    let mut offsets = vec![0];
    for &nb in &binner.n_bins {
        offsets.push(offsets.last().unwrap() + nb);
    }
    let booster = Booster {
        p: params,
        kinds: &x.kinds,
        bins: &bins,
        binner: &binner,
        offsets,
    };

    let pos: f64 = train.iter().map(|&r| y[r]).sum();
    let prevalence = (pos / train.len() as f64).clamp(1e-6, 1.0 - 1e-6);
    let base_score = (prevalence / (1.0 - prevalence)).ln();

    let n = x.n_rows;
    let mut raw = vec![base_score; n];
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    let y_valid: Vec<f64> = valid.iter().map(|&r| y[r]).collect();
    let y_train: Vec<f64> = train.iter().map(|&r| y[r]).collect();

    let mut trees = Vec::new();
    let mut validation_loss = Vec::new();
    let mut best = (f64::INFINITY, 0usize);
    for round in 0..params.max_rounds {
        for &r in &train {
            let p = sigmoid(raw[r]);
            grad[r] = p - y[r];
            hess[r] = (p * (1.0 - p)).max(1e-16);
        }
        let rows: Vec<u32> = if params.goss {
            goss_sample(&train, &mut grad, &mut hess, params, &mut rng)
        } else {
            train.iter().map(|&r| r as u32).collect()
        };
        let tree = booster.grow(rows, &grad, &hess);
        for (r, z) in raw.iter_mut().enumerate() {
            *z += tree.leaf(|f| x.columns[f][r]);
        }
        trees.push(tree);

        let train_raw: Vec<f64> = train.iter().map(|&r| raw[r]).collect();
        if !log_loss(&y_train, &train_raw).is_finite() {
            return Err(Error::NonFiniteLoss { iteration: round + 1 });
        }
        if !valid.is_empty() {
            let vr: Vec<f64> = valid.iter().map(|&r| raw[r]).collect();
            let loss = log_loss(&y_valid, &vr);
            validation_loss.push(loss);
            if loss < best.0 {
                best = (loss, round + 1);
            } else if round + 1 - best.1 >= params.early_stopping_rounds.max(1) {
                break;
            }
        }
    }
    if !valid.is_empty() {
        trees.truncate(best.1);
    }
    Ok(GbtModel {
        base_score,
        trees,
        validation_loss,
    })
}

/// Gradient-based one-side sampling: keep the `top_rate` fraction with the
/// largest |gradient|, sample `other_rate` of the rest and up-weight them.
fn goss_sample(
    train: &[usize],
    grad: &mut [f64],
    hess: &mut [f64],
    p: &GbtParams,
    rng: &mut impl Rng,
) -> Vec<u32> {
    let n = train.len();
    let mut order: Vec<usize> = train.to_vec();
    order.sort_by(|&a, &b| grad[b].abs().total_cmp(&grad[a].abs()).then(a.cmp(&b)));
    let top = ((n as f64 * p.goss_top_rate).ceil() as usize).min(n);
    let other = ((n as f64 * p.goss_other_rate).ceil() as usize).min(n - top);
    let mut rest = order.split_off(top);
    rest.shuffle(rng);
    rest.truncate(other);
    let w = (1.0 - p.goss_top_rate) / p.goss_other_rate;
    for &r in &rest {
        grad[r] *= w;
        hess[r] *= w;
    }
    order.extend(rest);
    order.sort_unstable();
    order.into_iter().map(|r| r as u32).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::features::FeatureKind;
    use rand::Rng;

    fn separable(n: usize, seed: u64) -> (FeatureMatrix, Vec<f64>) {
        let mut rng = seed::rng(seed);
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = a.iter().zip(&b).map(|(a, b)| f64::from(a + b > 0.0)).collect();
        (FeatureMatrix::new(vec![a, b], vec![FeatureKind::Numeric; 2]), y)
    }

    fn auc(p: &[f64], y: &[f64]) -> f64 {
        let (mut c, mut t) = (0.0, 0.0);
        for i in 0..p.len() {
            for j in 0..p.len() {
                if y[i] == 1.0 && y[j] == 0.0 {
                    t += 1.0;
                    c += if p[i] > p[j] { 1.0 } else if p[i] == p[j] { 0.5 } else { 0.0 };
                }
            }
        }
        c / t
    }

    #[test]
    fn separable_data_fit_well_both_policies() {
        let (x, y) = separable(200, 5);
        for params in [GbtParams::leaf_wise(), GbtParams::depth_wise()] {
            let m = fit_gbt(&x, &y, &params, 1).unwrap();
            assert!(auc(&m.predict_proba(&x), &y) >= 0.99);
        }
    }

    #[test]
    fn early_stopped_loss_not_worse_than_first_round() {
        let (x, mut y) = separable(300, 6);
        // label noise so early stopping actually triggers
        for i in (0..300).step_by(4) {
            y[i] = 1.0 - y[i];
        }
        let m = fit_gbt(&x, &y, &GbtParams::leaf_wise(), 3).unwrap();
        let best = m.validation_loss[m.trees.len() - 1];
        assert!(best <= m.validation_loss[0]);
        assert!(m.validation_loss.iter().all(|&l| l >= best));
    }

    #[test]
    fn leaf_and_depth_limits() {
        let (x, y) = separable(400, 7);
        let p = GbtParams {
            max_leaves: 5,
            max_depth: 15,
            ..GbtParams::leaf_wise()
        };
        let m = fit_gbt(&x, &y, &p, 1).unwrap();
        assert!(m.trees.iter().all(|t| t.n_leaves() <= 5));
        let p = GbtParams {
            max_depth: 2,
            max_leaves: 60,
            ..GbtParams::depth_wise()
        };
        let m = fit_gbt(&x, &y, &p, 1).unwrap();
        assert!(m.trees.iter().all(|t| t.depth() <= 2));
    }

    #[test]
    fn goss_runs_and_is_deterministic() {
        let (x, y) = separable(300, 8);
        let p = GbtParams {
            goss: true,
            ..GbtParams::leaf_wise()
        };
        let a = fit_gbt(&x, &y, &p, 11).unwrap();
        let b = fit_gbt(&x, &y, &p, 11).unwrap();
        assert_eq!(a, b);
        assert!(auc(&a.predict_proba(&x), &y) > 0.95);
    }

    #[test]
    fn grouped_split_keeps_copies_together() {
        let mut rng = seed::rng(4);
        let ids: Vec<u64> = (0..200).map(|_| rng.random_range(0..80)).collect();
        let y: Vec<f64> = ids.iter().map(|&i| (i % 3 == 0) as u8 as f64).collect();
        let (train, valid) = validation_split(&y, Some(&ids), 0.2, &mut seed::rng(5)).unwrap();
        assert_eq!(train.len() + valid.len(), 200);
        for &v in &valid {
            assert!(train.iter().all(|&t| ids[t] != ids[v]));
        }
        // unique ids reproduce the ungrouped split
        let unique: Vec<u64> = (0..200).collect();
        assert_eq!(
            validation_split(&y, Some(&unique), 0.2, &mut seed::rng(6)),
            validation_split(&y, None, 0.2, &mut seed::rng(6))
        );
    }
}
