//! Discrete Bayesian networks: quantile binning of numeric columns, BIC
//! hill climbing over DAGs, Dirichlet-smoothed conditional tables and
//! ancestral sampling.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_table, Diagnostics, Generator, GeneratorKind, Model};
use crate::cohort::ColumnKind;
use crate::error::{Error, Result};
use crate::stats::quantile_sorted;
use crate::impute::ImputedTable;
use crate::{seed, subseed};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BnParams {
    pub bins: usize,
    pub max_indegree: usize,
    pub restarts: usize,
    /// Random moves applied before each restart.
    pub perturb: usize,
    /// Dirichlet pseudocount per cell of a conditional table.
    pub alpha: f64,
}

impl Default for BnParams {
    fn default() -> Self {
        BnParams {
            bins: 5,
            max_indegree: 4,
            restarts: 3,
            perturb: 1,
            alpha: 1.0,
        }
    }
}

/// How a node's discrete state maps back to a cell value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Materialize {
    Level,
    /// `edges[k]..=edges[k + 1]` is bin `k`.
    Bins { edges: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnNode {
    pub name: String,
    pub states: usize,
    pub parents: Vec<usize>,
    /// One distribution over states per parent configuration (mixed radix,
    /// first parent most significant).
    pub cpt: Vec<Vec<f64>>,
    pub materialize: Materialize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnModel {
    pub nodes: Vec<BnNode>,
    pub order: Vec<usize>,
    pub bic: f64,
}

/// Bin edges `[min, cuts.., max]` from type-7 quantiles at `j / bins`.
/// Cut points are deduplicated and lie strictly below the maximum.
pub fn quantile_edges(values: &[f64], bins: usize) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    let mut edges = vec![lo];
    for j in 1..bins {
        let q = quantile_sorted(&sorted, j as f64 / bins as f64);
        let fresh = edges.len() == 1 || q > edges[edges.len() - 1];
        if q < hi && fresh {
            edges.push(q);
        }
    }
    edges.push(hi);
    edges
}

/// Bin of `v` given edges from [`quantile_edges`]: the number of interior
/// cut points strictly below `v`.
pub fn bin_of(edges: &[f64], v: f64) -> usize {
    let cuts = &edges[1..edges.len() - 1];
    cuts.partition_point(|&c| c < v)
}

struct Scorer<'a> {
    data: &'a [Vec<usize>],
    states: &'a [usize],
    cache: HashMap<(usize, Vec<usize>), f64>,
}

impl Scorer<'_> {
    /// BIC contribution of node `i` with sorted parent set `parents`.
    fn local(&mut self, i: usize, parents: &[usize]) -> f64 {
        if let Some(&s) = self.cache.get(&(i, parents.to_vec())) {
            return s;
        }
        let counts = family_counts(self.data, self.states, i, parents);
        let r = self.states[i];
        let q = counts.len();
        let n = self.data[i].len() as f64;
        let mut ll = 0.0;
        for row in &counts {
            let nj: f64 = row.iter().sum();
            for &c in row {
                if c > 0.0 {
                    ll += c * (c / nj).ln();
                }
            }
        }
        let score = ll - 0.5 * n.ln() * ((r - 1) * q) as f64;
        self.cache.insert((i, parents.to_vec()), score);
        score
    }
}

fn family_counts(data: &[Vec<usize>], states: &[usize], i: usize, parents: &[usize]) -> Vec<Vec<f64>> {
    let q: usize = parents.iter().map(|&p| states[p]).product();
    let mut counts = vec![vec![0.0; states[i]]; q];
    for r in 0..data[i].len() {
        counts[config_index(data, states, parents, r)][data[i][r]] += 1.0;
    }
    counts
}

fn config_index(data: &[Vec<usize>], states: &[usize], parents: &[usize], r: usize) -> usize {
    parents.iter().fold(0, |acc, &p| acc * states[p] + data[p][r])
}

#[derive(Clone)]
struct Dag {
    parents: Vec<Vec<usize>>,
}

impl Dag {
    fn empty(p: usize) -> Self {
        Dag {
            parents: vec![Vec::new(); p],
        }
    }

    fn has_edge(&self, u: usize, v: usize) -> bool {
        self.parents[v].contains(&u)
    }

    /// Whether `to` is reachable from `from` along directed edges.
    fn reaches(&self, from: usize, to: usize) -> bool {
        let p = self.parents.len();
        let mut seen = vec![false; p];
        let mut stack = vec![from];
        while let Some(u) = stack.pop() {
            if u == to {
                return true;
            }
            for v in 0..p {
                if !seen[v] && self.parents[v].contains(&u) {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        false
    }

    fn with(&self, v: usize, f: impl FnOnce(&mut Vec<usize>)) -> Vec<usize> {
        let mut ps = self.parents[v].clone();
        f(&mut ps);
        ps.sort_unstable();
        ps
    }
}

#[derive(Clone, Copy, Debug)]
enum Move {
    Add(usize, usize),
    Delete(usize, usize),
    Reverse(usize, usize),
}

fn apply(dag: &mut Dag, mv: Move) {
    match mv {
        Move::Add(u, v) => {
            dag.parents[v].push(u);
            dag.parents[v].sort_unstable();
        }
        Move::Delete(u, v) => dag.parents[v].retain(|&x| x != u),
        Move::Reverse(u, v) => {
            dag.parents[v].retain(|&x| x != u);
            dag.parents[u].push(v);
            dag.parents[u].sort_unstable();
        }
    }
}

/// Every legal move on `dag`, in a fixed order.
fn legal_moves(dag: &Dag, max_indegree: usize) -> Vec<Move> {
    let p = dag.parents.len();
    let mut moves = Vec::new();
    for u in 0..p {
        for v in 0..p {
            if u == v {
                continue;
            }
            if dag.has_edge(u, v) {
                moves.push(Move::Delete(u, v));
                if dag.parents[u].len() < max_indegree {
                    // v -> u is acyclic unless another path u ~> v exists
                    let mut without = dag.clone();
                    without.parents[v].retain(|&x| x != u);
                    if !without.reaches(u, v) {
                        moves.push(Move::Reverse(u, v));
                    }
                }
            } else if !dag.has_edge(v, u) && dag.parents[v].len() < max_indegree && !dag.reaches(v, u) {
                moves.push(Move::Add(u, v));
            }
        }
    }
    moves
}

fn delta(scorer: &mut Scorer, dag: &Dag, mv: Move) -> f64 {
    match mv {
        Move::Add(u, v) => scorer.local(v, &dag.with(v, |ps| ps.push(u))) - scorer.local(v, &dag.parents[v]),
        Move::Delete(u, v) => scorer.local(v, &dag.with(v, |ps| ps.retain(|&x| x != u))) - scorer.local(v, &dag.parents[v]),
        Move::Reverse(u, v) => {
            scorer.local(v, &dag.with(v, |ps| ps.retain(|&x| x != u))) - scorer.local(v, &dag.parents[v])
                + scorer.local(u, &dag.with(u, |ps| ps.push(v)))
                - scorer.local(u, &dag.parents[u])
        }
    }
}

fn total_score(scorer: &mut Scorer, dag: &Dag) -> f64 {
    (0..dag.parents.len()).map(|i| scorer.local(i, &dag.parents[i])).sum()
}

fn hill_climb(scorer: &mut Scorer, mut dag: Dag, max_indegree: usize) -> Dag {
    loop {
        let mut best: Option<(f64, Move)> = None;
        for mv in legal_moves(&dag, max_indegree) {
            let d = delta(scorer, &dag, mv);
            if d > 1e-9 && best.is_none_or(|(b, _)| d > b) {
                best = Some((d, mv));
            }
        }
        match best {
            Some((_, mv)) => apply(&mut dag, mv),
            None => return dag,
        }
    }
}

fn topological_order(parents: &[Vec<usize>]) -> Vec<usize> {
    let p = parents.len();
    let mut placed = vec![false; p];
    let mut order = Vec::with_capacity(p);
    while order.len() < p {
        let next = (0..p)
            .find(|&v| !placed[v] && parents[v].iter().all(|&u| placed[u]))
            .expect("graph is acyclic");
        placed[next] = true;
        order.push(next);
    }
    order
}

pub fn fit_bn(table: &ImputedTable, bins: usize, seed: u64) -> Result<Generator> {
    fit_bn_with(
        table,
        &BnParams {
            bins,
            ..BnParams::default()
        },
        seed,
    )
}

pub fn fit_bn_with(table: &ImputedTable, params: &BnParams, seed: u64) -> Result<Generator> {
    check_table(table, "fit_bn")?;
    if params.bins < 2 {
        return Err(Error::InvalidArgument("fit_bn needs at least 2 bins".into()));
    }
    let cohort = table.cohort();
    if cohort.n_rows() == 0 {
        return Err(Error::InvalidArgument("fit_bn: table has no rows".into()));
    }
    let schema = cohort.schema();
    let p = schema.n_cols();

    let mut data = Vec::with_capacity(p);
    let mut states = Vec::with_capacity(p);
    let mut materialize = Vec::with_capacity(p);
    for (c, col) in schema.columns.iter().enumerate() {
        let values = cohort.column(c);
        match col.kind {
            ColumnKind::Categorical => {
                data.push(values.iter().map(|&v| v as usize).collect::<Vec<_>>());
                states.push(col.n_levels());
                materialize.push(Materialize::Level);
            }
            ColumnKind::Numeric => {
                let edges = quantile_edges(&values, params.bins);
                if edges.len() < 3 {
                    return Err(Error::InvalidArgument(format!(
                        "column {:?} has a single level after binning",
                        col.name
                    )));
                }
                data.push(values.iter().map(|&v| bin_of(&edges, v)).collect());
                states.push(edges.len() - 1);
                materialize.push(Materialize::Bins { edges });
            }
        }
    }

    let mut scorer = Scorer {
        data: &data,
        states: &states,
        cache: HashMap::new(),
    };
    let mut best = hill_climb(&mut scorer, Dag::empty(p), params.max_indegree);
    let mut best_score = total_score(&mut scorer, &best);
    let mut rng = seed::rng(subseed!(seed, "bn-restarts"));
    for _ in 0..params.restarts {
        let mut start = best.clone();
        for _ in 0..params.perturb {
            let moves = legal_moves(&start, params.max_indegree);
            if moves.is_empty() {
                break;
            }
            apply(&mut start, moves[rng.random_range(0..moves.len())]);
        }
        let cand = hill_climb(&mut scorer, start, params.max_indegree);
        let s = total_score(&mut scorer, &cand);
        if s > best_score + 1e-9 {
            best = cand;
            best_score = s;
        }
    }

    let nodes: Vec<BnNode> = (0..p)
        .map(|i| {
            let parents = best.parents[i].clone();
            let cpt = family_counts(&data, &states, i, &parents)
                .into_iter()
                .map(|row| {
                    let denom = row.iter().sum::<f64>() + params.alpha * states[i] as f64;
                    row.iter().map(|c| (c + params.alpha) / denom).collect()
                })
                .collect();
            BnNode {
                name: schema.columns[i].name.clone(),
                states: states[i],
                parents,
                cpt,
                materialize: materialize[i].clone(),
            }
        })
        .collect();
    let mut edges: Vec<(String, String)> = nodes
        .iter()
        .flat_map(|n| n.parents.iter().map(move |&u| (schema.columns[u].name.clone(), n.name.clone())))
        .collect();
    edges.sort();
    let model = BnModel {
        order: topological_order(&best.parents),
        nodes,
        bic: best_score,
    };
    Ok(Generator::new(
        GeneratorKind::Bn,
        schema.clone(),
        Diagnostics::Bn { edges, bic: best_score },
        Model::Bn(model),
    ))
}

impl BnModel {
    /// Directed edges as (parent, child) node indices.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut e: Vec<(usize, usize)> = self
            .nodes
            .iter()
            .enumerate()
            .flat_map(|(v, n)| n.parents.iter().map(move |&u| (u, v)))
            .collect();
        e.sort_unstable();
        e
    }

    pub(crate) fn sample(&self, m: usize, rng: &mut seed::Rng) -> Vec<f64> {
        let p = self.nodes.len();
        let mut out = Vec::with_capacity(m * p);
        let mut state = vec![0usize; p];
        for _ in 0..m {
            let mut row = vec![0.0; p];
            for &i in &self.order {
                let node = &self.nodes[i];
                let cfg = node.parents.iter().fold(0, |acc, &u| acc * self.nodes[u].states + state[u]);
                let probs = &node.cpt[cfg];
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut k = node.states - 1;
                for (s, &pr) in probs.iter().enumerate() {
                    acc += pr;
                    if u < acc {
                        k = s;
                        break;
                    }
                }
                state[i] = k;
                row[i] = match &node.materialize {
                    Materialize::Level => k as f64,
                    Materialize::Bins { edges } => {
                        let (lo, hi) = (edges[k], edges[k + 1]);
                        lo + rng.random::<f64>() * (hi - lo)
                    }
                };
            }
            out.extend(row);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{Cohort, CohortSchema, ColumnSpec};
    use crate::syngen::sample;

    fn binary_table(rows: &[[f64; 3]]) -> ImputedTable {
        let schema = CohortSchema::new(
            vec![ColumnSpec::binary("A"), ColumnSpec::binary("B"), ColumnSpec::binary("C")],
            vec![],
            None,
        )
        .unwrap();
        let values = rows.iter().flat_map(|r| r.to_vec()).collect();
        ImputedTable::from_complete(Cohort::from_values(schema, rows.len(), values).unwrap()).unwrap()
    }

    #[test]
    fn independent_columns_give_empty_graph() {
        let mut rng = seed::rng(8);
        let rows: Vec<[f64; 3]> = (0..3000)
            .map(|_| [0.5, 0.3, 0.6].map(|p| f64::from(rng.random_bool(p))))
            .collect();
        let g = fit_bn(&binary_table(&rows), 5, 1).unwrap();
        assert_eq!(g.bn_model().unwrap().edges(), vec![]);
        // categorical marginals of a large sample track the data
        let s = sample(&g, 10_000, 2).unwrap();
        for (c, p) in [0.5, 0.3, 0.6].iter().enumerate() {
            let f = s.cohort().column(c).iter().sum::<f64>() / 10_000.0;
            assert!((f - p).abs() < 0.03, "column {c}: {f}");
        }
    }

    #[test]
    fn cpt_rows_sum_to_one_and_graph_is_acyclic() {
        let mut rng = seed::rng(4);
        let rows: Vec<[f64; 3]> = (0..2000)
            .map(|_| {
                let a = rng.random_bool(0.5);
                let b = rng.random_bool(if a { 0.85 } else { 0.2 });
                let c = rng.random_bool(if b { 0.8 } else { 0.1 });
                [a, b, c].map(f64::from)
            })
            .collect();
        let g = fit_bn(&binary_table(&rows), 5, 1).unwrap();
        let m = g.bn_model().unwrap();
        for n in &m.nodes {
            for row in &n.cpt {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
        assert_eq!(m.order.len(), 3);
        let skeleton: Vec<(usize, usize)> = m.edges().into_iter().map(|(u, v)| (u.min(v), u.max(v))).collect();
        assert!(skeleton.contains(&(0, 1)) && skeleton.contains(&(1, 2)) && !skeleton.contains(&(0, 2)));
        assert_eq!(sample(&g, 0, 1).unwrap().n_rows(), 0);
    }

    #[test]
    fn numeric_binning() {
        let v: Vec<f64> = (0..100).map(f64::from).collect();
        let e = quantile_edges(&v, 5);
        assert_eq!(e.len(), 6);
        assert_eq!(bin_of(&e, 0.0), 0);
        assert_eq!(bin_of(&e, 99.0), 4);
        let constant = vec![2.0; 10];
        assert_eq!(quantile_edges(&constant, 5), vec![2.0, 2.0]);
        // mass at the minimum keeps its own bin
        let zeros: Vec<f64> = (0..100).map(|i| if i < 70 { 0.0 } else { i as f64 }).collect();
        let e = quantile_edges(&zeros, 5);
        assert_eq!(bin_of(&e, 0.0), 0);
        assert!(bin_of(&e, 99.0) >= 1);
    }
}
