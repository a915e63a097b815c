//! Disappointment-aversion utility over two equally likely states and its
//! exact demand on a linear budget.
//!
//! `U(x) = w·u(max(x_A, x_B)) + (1 - w)·u(min(x_A, x_B))` with
//! `w = 1/(2 + β)` and CRRA `u(x) = (x^(1-ρ) - 1)/(1 - ρ)`.
//!
//! Restricted to either half of the budget line (`x_A >= x_B` or
//! `x_A <= x_B`) the objective is concave, so its maximum on each half is the
//! interior first-order point when that lies in the half, and otherwise a
//! boundary point (the kink `x_A = x_B` or a corner). Enumerating those
//! candidates and keeping the best gives the exact optimum.

use serde::{Deserialize, Serialize};

use crate::data::{Demand, PricePair};
use crate::error::{Error, Result};

/// `|ρ - 1|` below this switches CRRA to its logarithmic limit.
pub const LOG_BRANCH_TOL: f64 = 1e-10;

/// Disappointment aversion `β > -1` and relative risk aversion `ρ > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DaParams {
    beta: f64,
    rho: f64,
}

impl DaParams {
    pub fn new(beta: f64, rho: f64) -> Result<Self> {
        if !(beta.is_finite() && beta > -1.0) {
            return Err(Error::Domain(format!("beta must exceed -1, got {beta}")));
        }
        if !(rho.is_finite() && rho > 0.0) {
            return Err(Error::Domain(format!("rho must be positive, got {rho}")));
        }
        Ok(Self { beta, rho })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// Decision weight on the better outcome, `1/(2 + β)`.
    pub fn elation_weight(&self) -> f64 {
        1.0 / (2.0 + self.beta)
    }
}

/// CRRA utility; `-inf` at zero wealth when `ρ >= 1`.
pub fn crra(x: f64, rho: f64) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(Error::Domain(format!("wealth must be nonnegative, got {x}")));
    }
    Ok(crra_unchecked(x, rho))
}

#[inline]
fn crra_unchecked(x: f64, rho: f64) -> f64 {
    if (rho - 1.0).abs() < LOG_BRANCH_TOL {
        if x == 0.0 {
            f64::NEG_INFINITY
        } else {
            x.ln()
        }
    } else if x == 0.0 && rho > 1.0 {
        f64::NEG_INFINITY
    } else {
        (x.powf(1.0 - rho) - 1.0) / (1.0 - rho)
    }
}

/// Disappointment-aversion utility of a bundle.
pub fn da_utility(x: Demand, params: DaParams) -> Result<f64> {
    let (hi, lo) = if x.a() >= x.b() { (x.a(), x.b()) } else { (x.b(), x.a()) };
    let w = params.elation_weight();
    Ok(w * crra(hi, params.rho)? + (1.0 - w) * crra(lo, params.rho)?)
}

fn utility_unchecked(xa: f64, xb: f64, params: DaParams) -> f64 {
    let (hi, lo) = if xa >= xb { (xa, xb) } else { (xb, xa) };
    let w = params.elation_weight();
    let (uh, ul) = (crra_unchecked(hi, params.rho), crra_unchecked(lo, params.rho));
    // Avoid 0 * -inf when a weight vanishes.
    if ul == f64::NEG_INFINITY || uh == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    w * uh + (1.0 - w) * ul
}

/// Which candidate the optimum came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemandBranch {
    InteriorAHigh,
    InteriorBHigh,
    Kink,
    CornerA,
    CornerB,
}

impl DemandBranch {
    fn priority(self) -> u8 {
        match self {
            DemandBranch::Kink => 0,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DemandSolution {
    pub demand: Demand,
    pub branch: DemandBranch,
    pub utility: f64,
    /// Another candidate attained the same utility; the tie-break
    /// (kink first, then larger `x_A`) decided.
    pub tie: bool,
}

/// Utility-maximizing bundle on the budget `p·x = 1`.
pub fn optimal_demand(p: PricePair, params: DaParams) -> DemandSolution {
    let (pa, pb) = (p.a(), p.b());
    let w = params.elation_weight();
    let odds = w / (1.0 - w);
    let inv_rho = 1.0 / params.rho;

    let mut candidates: Vec<(f64, f64, DemandBranch)> = Vec::with_capacity(5);
    let k_a = (odds * pb / pa).powf(inv_rho);
    if k_a > 1.0 && k_a.is_finite() {
        let xb = 1.0 / (pa * k_a + pb);
        candidates.push((k_a * xb, xb, DemandBranch::InteriorAHigh));
    }
    let k_b = (odds * pa / pb).powf(inv_rho);
    if k_b > 1.0 && k_b.is_finite() {
        let xa = 1.0 / (pa + pb * k_b);
        candidates.push((xa, k_b * xa, DemandBranch::InteriorBHigh));
    }
    let m = 1.0 / (pa + pb);
    candidates.push((m, m, DemandBranch::Kink));
    if params.rho < 1.0 - LOG_BRANCH_TOL {
        candidates.push((1.0 / pa, 0.0, DemandBranch::CornerA));
        candidates.push((0.0, 1.0 / pb, DemandBranch::CornerB));
    }

    let scored: Vec<_> = candidates
        .into_iter()
        .map(|(xa, xb, br)| (xa, xb, br, utility_unchecked(xa, xb, params)))
        .collect();
    let best_u = scored.iter().map(|c| c.3).fold(f64::NEG_INFINITY, f64::max);
    let mut tied: Vec<_> = scored.iter().filter(|c| c.3 == best_u).collect();
    tied.sort_by(|l, r| {
        l.2.priority()
            .cmp(&r.2.priority())
            .then(r.0.total_cmp(&l.0))
    });
    let (xa, xb, branch, utility) = *tied[0];
    DemandSolution {
        demand: Demand::raw(xa, xb),
        branch,
        utility,
        tie: tied.len() > 1,
    }
}
