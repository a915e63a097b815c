//! Deviation from expected utility (D-EUT).
//!
//! With two equally likely states, a concave expected-utility maximizer
//! satisfies `u'(x_s^k) = λ^k p_s^k` (probabilities cancel). Concavity then
//! requires, for every pair of positive quantities with
//! `x_s^k > x_{s'}^{k'}`, that `λ^k p_s^k <= λ^{k'} p_{s'}^{k'}`, i.e. the
//! difference constraint
//!
//! ```text
//! L^k - L^{k'} <= ln p_{s'}^{k'} - ln p_s^k,      L^k = ln λ^k
//! ```
//!
//! encoded as an edge `k' -> k` with that weight. Equal quantities give a
//! pair of opposite edges. The system is feasible iff the graph has no
//! negative cycle, and the smallest uniform slack that makes it feasible is
//! minus the minimum cycle mean. That slack is the index.

use petgraph::algo::tarjan_scc;
use petgraph::graph::{DiGraph, NodeIndex};
use serde::{Deserialize, Serialize};

use crate::data::SubjectDataset;
use crate::error::{Error, Result};

/// Tolerance on cycle-weight sign decisions.
pub const CYCLE_TOL: f64 = 1e-9;

/// Relative tolerance under which two quantities count as equal.
pub const QUANTITY_TIE_TOL: f64 = 1e-12;

/// Index reported when the only violation is a zero-weight cycle through a
/// strict comparison.
pub const STRICT_TIE_FLAG: f64 = f64::MIN_POSITIVE;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EuEdge {
    pub from: usize,
    pub to: usize,
    pub weight: f64,
    /// Derived from a strict quantity comparison.
    pub strict: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EuConstraintGraph {
    pub nodes: usize,
    pub edges: Vec<EuEdge>,
    /// Observation-state pairs left out because the quantity was zero.
    pub dropped_pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeutResult {
    pub deut: f64,
    /// Minimum cycle mean, `None` for an acyclic graph.
    pub min_cycle_mean: Option<f64>,
    /// Observations (zero-based) along a cycle attaining the minimum mean.
    pub witness_cycle: Option<Vec<usize>>,
    pub dropped_pairs: usize,
    /// Set when the index is [`STRICT_TIE_FLAG`].
    pub strict_tie: bool,
}

fn quantities_equal(a: f64, b: f64) -> bool {
    (a - b).abs() <= QUANTITY_TIE_TOL * a.abs().max(b.abs())
}

/// Builds the first-order-condition constraint graph for a dataset.
pub fn build_eu_graph(ds: &SubjectDataset) -> Result<EuConstraintGraph> {
    struct Item {
        obs: usize,
        qty: f64,
        log_price: f64,
    }
    let mut items = Vec::with_capacity(2 * ds.len());
    let mut dropped = 0;
    for (k, c) in ds.rounds().iter().enumerate() {
        let (p, x) = (c.prices(), c.demand());
        for (qty, price) in [(x.a(), p.a()), (x.b(), p.b())] {
            if qty > 0.0 {
                items.push(Item {
                    obs: k,
                    qty,
                    log_price: price.ln(),
                });
            } else {
                dropped += 1;
            }
        }
    }
    if items.is_empty() {
        return Err(Error::Degenerate(format!(
            "subject `{}`: every quantity is zero",
            ds.subject_id()
        )));
    }
    let mut edges = Vec::new();
    for (i, hi) in items.iter().enumerate() {
        for (j, lo) in items.iter().enumerate() {
            if i == j {
                continue;
            }
            let equal = quantities_equal(hi.qty, lo.qty);
            if equal || hi.qty > lo.qty {
                edges.push(EuEdge {
                    from: lo.obs,
                    to: hi.obs,
                    weight: lo.log_price - hi.log_price,
                    strict: !equal,
                });
            }
        }
    }
    Ok(EuConstraintGraph {
        nodes: ds.len(),
        edges,
        dropped_pairs: dropped,
    })
}

/// Cheapest parallel edge per ordered node pair, `INFINITY` when absent.
fn dense_min_weights(g: &EuConstraintGraph) -> Vec<f64> {
    let n = g.nodes;
    let mut w = vec![f64::INFINITY; n * n];
    for e in &g.edges {
        let cell = &mut w[e.from * n + e.to];
        if e.weight < *cell {
            *cell = e.weight;
        }
    }
    w
}

/// Karp's minimum mean cycle on a dense weight matrix (`INFINITY` = no edge).
///
/// `walk[k][v]` is the lightest walk of exactly `k` edges ending at `v` from
/// any start; the minimum cycle mean is
/// `min_v max_{k<n} (walk[n][v] - walk[k][v]) / (n - k)`.
pub fn min_mean_cycle(n: usize, weights: &[f64]) -> Option<f64> {
    assert_eq!(weights.len(), n * n);
    if n == 0 {
        return None;
    }
    let mut walk = vec![vec![f64::INFINITY; n]; n + 1];
    walk[0].fill(0.0);
    for k in 1..=n {
        let (prev, cur) = walk.split_at_mut(k);
        let (prev, cur) = (&prev[k - 1], &mut cur[0]);
        for u in 0..n {
            let du = prev[u];
            if du == f64::INFINITY {
                continue;
            }
            let row = &weights[u * n..(u + 1) * n];
            for (v, &w) in row.iter().enumerate() {
                let cand = du + w;
                if cand < cur[v] {
                    cur[v] = cand;
                }
            }
        }
    }
    let mut best: Option<f64> = None;
    for v in 0..n {
        let last = walk[n][v];
        if last == f64::INFINITY {
            continue;
        }
        let worst = (0..n)
            .filter(|&k| walk[k][v] < f64::INFINITY)
            .map(|k| (last - walk[k][v]) / (n - k) as f64)
            .fold(f64::NEG_INFINITY, f64::max);
        best = Some(best.map_or(worst, |b: f64| b.min(worst)));
    }
    best
}

/// Bellman-Ford potentials from a virtual source joined to every node,
/// after `n` relaxation rounds.
fn potentials(n: usize, weights: &[f64], shift: f64) -> Vec<f64> {
    let mut d = vec![0.0; n];
    for _ in 0..n {
        let mut changed = false;
        for u in 0..n {
            for v in 0..n {
                let w = weights[u * n + v];
                if w < f64::INFINITY && d[u] + w + shift < d[v] {
                    d[v] = d[u] + w + shift;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    d
}

/// True when adding `shift` to every edge still leaves a cycle of weight
/// below `-tol`.
pub fn has_negative_cycle(g: &EuConstraintGraph, shift: f64, tol: f64) -> bool {
    let n = g.nodes;
    let mut d = vec![0.0; n];
    for _ in 0..=n {
        let mut changed = false;
        for e in &g.edges {
            let cand = d[e.from] + e.weight + shift;
            if cand < d[e.to] - tol {
                d[e.to] = cand;
                changed = true;
            }
        }
        if !changed {
            return false;
        }
    }
    true
}

/// Tight subgraph of `g` with every weight shifted by `shift`: edges whose
/// reduced cost under Bellman-Ford potentials is within [`CYCLE_TOL`].
fn tight_subgraph(g: &EuConstraintGraph, shift: f64) -> (DiGraph<(), bool>, Vec<EuEdge>) {
    let n = g.nodes;
    let dense = dense_min_weights(g);
    let d = potentials(n, &dense, shift);
    let mut graph = DiGraph::<(), bool>::with_capacity(n, g.edges.len());
    for _ in 0..n {
        graph.add_node(());
    }
    let mut tight = Vec::new();
    for e in &g.edges {
        let reduced = d[e.from] + e.weight + shift - d[e.to];
        if reduced <= CYCLE_TOL {
            graph.add_edge(NodeIndex::new(e.from), NodeIndex::new(e.to), e.strict);
            tight.push(*e);
        }
    }
    (graph, tight)
}

/// Any cycle inside the strongly connected component containing `start`.
fn cycle_through(graph: &DiGraph<(), bool>, component: &[usize], start: usize) -> Vec<usize> {
    use std::collections::VecDeque;
    let in_comp: std::collections::HashSet<usize> = component.iter().copied().collect();
    if graph.contains_edge(NodeIndex::new(start), NodeIndex::new(start)) {
        return vec![start];
    }
    let mut parent = vec![usize::MAX; graph.node_count()];
    let mut queue = VecDeque::from([start]);
    while let Some(u) = queue.pop_front() {
        for v in graph.neighbors(NodeIndex::new(u)).map(|ix| ix.index()) {
            if !in_comp.contains(&v) {
                continue;
            }
            if v == start {
                let mut path = vec![u];
                let mut cur = u;
                while cur != start {
                    cur = parent[cur];
                    path.push(cur);
                }
                path.reverse();
                return path;
            }
            if parent[v] == usize::MAX && v != start {
                parent[v] = u;
                queue.push_back(v);
            }
        }
    }
    vec![start]
}

fn has_cycle(graph: &DiGraph<(), bool>, comp: &[usize]) -> bool {
    comp.len() > 1 || graph.contains_edge(NodeIndex::new(comp[0]), NodeIndex::new(comp[0]))
}

/// The D-EUT index of a dataset.
pub fn deut_index(ds: &SubjectDataset) -> Result<DeutResult> {
    let g = build_eu_graph(ds)?;
    Ok(deut_from_graph(&g))
}

pub fn deut_from_graph(g: &EuConstraintGraph) -> DeutResult {
    let dense = dense_min_weights(g);
    let Some(mu) = min_mean_cycle(g.nodes, &dense) else {
        return DeutResult {
            deut: 0.0,
            min_cycle_mean: None,
            witness_cycle: None,
            dropped_pairs: g.dropped_pairs,
            strict_tie: false,
        };
    };

    // Cycles of mean `mu` become zero-weight after shifting by `-mu`; they
    // are exactly the cycles of the tight subgraph.
    let (tight, tight_edges) = tight_subgraph(g, -mu);
    let sccs = tarjan_scc(&tight);
    let comp_of = {
        let mut c = vec![0usize; g.nodes];
        for (i, comp) in sccs.iter().enumerate() {
            for ix in comp {
                c[ix.index()] = i;
            }
        }
        c
    };
    let witness = sccs
        .iter()
        .map(|comp| comp.iter().map(|ix| ix.index()).collect::<Vec<_>>())
        .find(|comp| has_cycle(&tight, comp))
        .map(|comp| {
            let start = *comp.iter().min().unwrap();
            cycle_through(&tight, &comp, start)
        });

    let (deut, strict_tie) = if mu < -CYCLE_TOL {
        (-mu, false)
    } else if mu <= CYCLE_TOL {
        let strict_zero = tight_edges
            .iter()
            .any(|e| e.strict && comp_of[e.from] == comp_of[e.to]);
        if strict_zero {
            (STRICT_TIE_FLAG, true)
        } else {
            (0.0, false)
        }
    } else {
        (0.0, false)
    };
    DeutResult {
        deut,
        min_cycle_mean: Some(mu),
        witness_cycle: witness,
        dropped_pairs: g.dropped_pairs,
        strict_tie,
    }
}
