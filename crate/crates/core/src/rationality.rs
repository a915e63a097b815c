//! Revealed preference: the direct and indirect revealed-preference
//! relations at efficiency level `e`, GARP, Afriat's critical cost efficiency
//! index, and first-order stochastic dominance violations.
//!
//! Observation `i` is directly revealed preferred to `j` at efficiency `e`
//! when `e·(p^i·x^i) >= p^i·x^j`. A GARP(e) violation is a pair `(i, j)` with
//! `i` revealed preferred to `j` (transitive closure) while
//! `e·(p^j·x^j) > p^j·x^i`, i.e. `x^i` was strictly affordable at `j`.

use serde::{Deserialize, Serialize};

use crate::data::SubjectDataset;

/// Absolute tolerance used when building the direct relation and when
/// testing GARP inequalities.
pub const RELATION_TOL: f64 = 1e-12;

/// Absolute tolerance for FOSD comparisons.
pub const FOSD_TOL: f64 = 1e-9;

/// Square boolean matrix stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoolMatrix {
    n: usize,
    cells: Vec<bool>,
}

impl BoolMatrix {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            cells: vec![false; n * n],
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.cells[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: bool) {
        self.cells[i * self.n + j] = v;
    }

    /// Warshall's algorithm.
    pub fn transitive_closure(&self) -> Self {
        let n = self.n;
        let mut c = self.clone();
        for k in 0..n {
            for i in 0..n {
                if !c.get(i, k) {
                    continue;
                }
                for j in 0..n {
                    if c.get(k, j) {
                        c.set(i, j, true);
                    }
                }
            }
        }
        c
    }
}

/// `cost[i][j] = p^i · x^j`.
#[derive(Debug, Clone)]
pub struct ExpenditureMatrix {
    n: usize,
    cost: Vec<f64>,
}

impl ExpenditureMatrix {
    pub fn from_dataset(ds: &SubjectDataset) -> Self {
        let prices: Vec<_> = ds.prices().collect();
        let demands: Vec<_> = ds.demands().collect();
        let n = prices.len();
        let mut cost = Vec::with_capacity(n * n);
        for p in &prices {
            for x in &demands {
                cost.push(p.cost(*x));
            }
        }
        Self { n, cost }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.cost[i * self.n + j]
    }
}

/// Direct revealed-preference relation and its transitive closure at one
/// efficiency level.
#[derive(Debug, Clone)]
pub struct RevealedRelation {
    pub efficiency: f64,
    pub direct: BoolMatrix,
    pub closure: BoolMatrix,
}

impl RevealedRelation {
    pub fn len(&self) -> usize {
        self.direct.size()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn relation_from(costs: &ExpenditureMatrix, e: f64) -> RevealedRelation {
    let n = costs.len();
    let mut direct = BoolMatrix::new(n);
    for i in 0..n {
        let budget = e * costs.get(i, i);
        for j in 0..n {
            direct.set(i, j, budget >= costs.get(i, j) - RELATION_TOL);
        }
    }
    let closure = direct.transitive_closure();
    RevealedRelation {
        efficiency: e,
        direct,
        closure,
    }
}

fn violations_from(costs: &ExpenditureMatrix, rel: &RevealedRelation) -> Vec<(usize, usize)> {
    let n = costs.len();
    let e = rel.efficiency;
    let mut out = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if rel.closure.get(i, j) && e * costs.get(j, j) > costs.get(j, i) + RELATION_TOL {
                out.push((i, j));
            }
        }
    }
    out
}

/// Revealed-preference relation at efficiency `e` (clamped to `[0, 1]`).
pub fn direct_relation(ds: &SubjectDataset, e: f64) -> RevealedRelation {
    relation_from(&ExpenditureMatrix::from_dataset(ds), e.clamp(0.0, 1.0))
}

/// Outcome of a GARP(e) test. Violations are zero-based observation pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct GarpOutcome {
    pub holds: bool,
    pub violations: Vec<(usize, usize)>,
}

/// Tests GARP at efficiency level `e`.
pub fn garp_holds(ds: &SubjectDataset, e: f64) -> GarpOutcome {
    let costs = ExpenditureMatrix::from_dataset(ds);
    garp_with(&costs, e.clamp(0.0, 1.0))
}

fn garp_with(costs: &ExpenditureMatrix, e: f64) -> GarpOutcome {
    let rel = relation_from(costs, e);
    let violations = violations_from(costs, &rel);
    GarpOutcome {
        holds: violations.is_empty(),
        violations,
    }
}

/// How a CCEI value was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CceiMethod {
    ExactCandidateSet,
    BinarySearch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CceiResult {
    pub ccei: f64,
    pub violating_pairs_at_1: Vec<(usize, usize)>,
    pub method: CceiMethod,
}

/// Afriat's critical cost efficiency index: `sup { e in [0,1] : GARP(e) }`.
///
/// The relation only changes at the ratios `p^i·x^j / p^i·x^i`, and GARP(e)
/// is monotone in `e`, so the supremum is one of those ratios (or 0 or 1).
/// Between two consecutive candidates the relation is constant; testing the
/// midpoint of each gap locates the last gap on which GARP holds, whose upper
/// end is the supremum (it need not be attained).
pub fn ccei(ds: &SubjectDataset) -> CceiResult {
    let costs = ExpenditureMatrix::from_dataset(ds);
    let at_one = garp_with(&costs, 1.0);
    if at_one.holds {
        return CceiResult {
            ccei: 1.0,
            violating_pairs_at_1: Vec::new(),
            method: CceiMethod::ExactCandidateSet,
        };
    }
    let n = costs.len();
    let mut candidates = vec![0.0, 1.0];
    for i in 0..n {
        let own = costs.get(i, i);
        for j in 0..n {
            if i != j {
                let ratio = costs.get(i, j) / own;
                if ratio > 0.0 && ratio < 1.0 {
                    candidates.push(ratio);
                }
            }
        }
    }
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();

    // Binary search over gap indices: gap k is (c[k], c[k+1]).
    let holds_in_gap = |k: usize| garp_with(&costs, 0.5 * (candidates[k] + candidates[k + 1])).holds;
    let gaps = candidates.len() - 1;
    let (mut lo, mut hi) = (0usize, gaps);
    // Invariant: every gap < lo holds, every gap >= hi fails.
    while lo < hi {
        let mid = (lo + hi) / 2;
        if holds_in_gap(mid) {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    // Gap `lo` is the first failing gap; its lower end is the supremum.
    let value = candidates[lo];
    CceiResult {
        ccei: value,
        violating_pairs_at_1: at_one.violations,
        method: CceiMethod::ExactCandidateSet,
    }
}

/// CCEI by bisection on `e` to absolute precision `tol`.
pub fn ccei_bisection(ds: &SubjectDataset, tol: f64) -> CceiResult {
    let costs = ExpenditureMatrix::from_dataset(ds);
    let at_one = garp_with(&costs, 1.0);
    if at_one.holds {
        return CceiResult {
            ccei: 1.0,
            violating_pairs_at_1: Vec::new(),
            method: CceiMethod::BinarySearch,
        };
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if garp_with(&costs, mid).holds {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    CceiResult {
        ccei: 0.5 * (lo + hi),
        violating_pairs_at_1: at_one.violations,
        method: CceiMethod::BinarySearch,
    }
}

/// Per-round FOSD flags: holding strictly more of the strictly more
/// expensive Arrow security under equally likely states.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FosdReport {
    pub count: usize,
    pub flags: Vec<bool>,
}

pub fn fosd_violation(p_a: f64, p_b: f64, x_a: f64, x_b: f64) -> bool {
    (p_a > p_b + FOSD_TOL && x_a > x_b + FOSD_TOL) || (p_a < p_b - FOSD_TOL && x_a < x_b - FOSD_TOL)
}

pub fn fosd_violations(ds: &SubjectDataset) -> FosdReport {
    let flags: Vec<bool> = ds
        .rounds()
        .iter()
        .map(|c| {
            let (p, x) = (c.prices(), c.demand());
            fosd_violation(p.a(), p.b(), x.a(), x.b())
        })
        .collect();
    FosdReport {
        count: flags.iter().filter(|&&f| f).count(),
        flags,
    }
}
