//! Choice data in the three interchangeable representations used by the
//! portfolio task:
//!
//! * `(r, t)`: per-point asset returns and the points invested out of 100,
//! * `(p, x)`: unit prices and demands with expenditure normalized to one,
//! * `(q, y)`: prices relative to asset A (`q_A = 1`) and demands.
//!
//! Every [`ChoiceRound`] carries the normalized `(p, x)` view used by the
//! analysis code alongside the record exactly as it was observed, so that
//! files can be written back without loss.

mod io;

pub use io::{read_datasets, read_schedule, write_datasets, write_schedule, ChoiceFormat};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Token sums may deviate from 100 by at most this many points.
pub const DEFAULT_SLACK: f64 = 5.0;

/// Tolerance on the budget identity `p·x = 1` for stored rounds.
pub const BUDGET_TOL: f64 = 1e-9;

fn positive(name: &str, v: f64) -> Result<f64> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(Error::Domain(format!("{name} must be a positive finite number, got {v}")))
    }
}

fn nonnegative(name: &str, v: f64) -> Result<f64> {
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err(Error::Domain(format!("{name} must be a nonnegative finite number, got {v}")))
    }
}

/// Dollars paid per point invested in each asset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReturnPair {
    a: f64,
    b: f64,
}

impl ReturnPair {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        Ok(Self {
            a: positive("r_a", a)?,
            b: positive("r_b", b)?,
        })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }
}

/// Price of one unit of demand for each asset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PricePair {
    a: f64,
    b: f64,
}

impl PricePair {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        Ok(Self {
            a: positive("p_a", a)?,
            b: positive("p_b", b)?,
        })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    /// Cost of `x` at these prices.
    pub fn cost(&self, x: Demand) -> f64 {
        self.a * x.a + self.b * x.b
    }

    pub fn swapped(&self) -> Self {
        Self { a: self.b, b: self.a }
    }
}

/// Budget-line intercepts; implies prices `1/z` at expenditure one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterceptPair {
    a: f64,
    b: f64,
}

impl InterceptPair {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        Ok(Self {
            a: positive("z_a", a)?,
            b: positive("z_b", b)?,
        })
    }

    pub fn prices(&self) -> PricePair {
        PricePair {
            a: 1.0 / self.a,
            b: 1.0 / self.b,
        }
    }
}

/// Points invested in each asset.
///
/// Only nonnegativity is enforced here; the token-sum band is checked where
/// allocations are ingested (see [`Allocation::check_band`]).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    a: f64,
    b: f64,
}

impl Allocation {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        Ok(Self {
            a: nonnegative("t_a", a)?,
            b: nonnegative("t_b", b)?,
        })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn sum(&self) -> f64 {
        self.a + self.b
    }

    /// Fails unless `100 - slack <= t_a + t_b <= 100 + slack`.
    pub fn check_band(&self, slack: f64) -> Result<()> {
        let s = self.sum();
        if (100.0 - slack..=100.0 + slack).contains(&s) {
            Ok(())
        } else {
            Err(Error::Validation(format!(
                "token sum {s} outside slack band [{}, {}]",
                100.0 - slack,
                100.0 + slack
            )))
        }
    }
}

/// Quantities of the two Arrow securities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Demand {
    a: f64,
    b: f64,
}

impl Demand {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        Ok(Self {
            a: nonnegative("x_a", a)?,
            b: nonnegative("x_b", b)?,
        })
    }

    pub(crate) fn raw(a: f64, b: f64) -> Self {
        Self { a, b }
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            a: self.a * k,
            b: self.b * k,
        }
    }

    pub fn swapped(&self) -> Self {
        Self { a: self.b, b: self.a }
    }
}

/// `p_i = 1 / (100 r_i)`.
pub fn returns_to_prices(r: ReturnPair) -> PricePair {
    PricePair {
        a: 1.0 / (100.0 * r.a),
        b: 1.0 / (100.0 * r.b),
    }
}

/// `r_i = 1 / (100 p_i)`.
pub fn prices_to_returns(p: PricePair) -> ReturnPair {
    ReturnPair {
        a: 1.0 / (100.0 * p.a),
        b: 1.0 / (100.0 * p.b),
    }
}

/// Demand implied by a token allocation: `x_i = r_i t_i`.
///
/// When the tokens do not sum to exactly 100 the demand is rescaled by
/// `100 / (t_a + t_b)` so that the bundle exhausts a unit budget; the second
/// element of the result reports whether that happened.
pub fn tokens_to_demand(r: ReturnPair, t: Allocation, slack: f64) -> Result<(Demand, bool)> {
    t.check_band(slack)?;
    let sum = t.sum();
    let rescaled = (sum - 100.0).abs() > 1e-9;
    let k = if rescaled { 100.0 / sum } else { 1.0 };
    Ok((Demand::raw(r.a * t.a * k, r.b * t.b * k), rescaled))
}

/// Tokens that buy `x` at returns `r`: `t_i = x_i / r_i`.
pub fn demand_to_tokens(r: ReturnPair, x: Demand) -> Allocation {
    Allocation {
        a: x.a / r.a,
        b: x.b / r.b,
    }
}

/// Converts a `(q, y)` observation (asset A is the numeraire) into a round.
pub fn normalize_q_format(round: u32, q_b: f64, y: Demand) -> Result<ChoiceRound> {
    let q_b = positive("q_b", q_b)?;
    let wealth = y.a + q_b * y.b;
    if wealth <= 0.0 {
        return Err(Error::Degenerate(format!(
            "round {round}: bundle has zero expenditure (y_a + q_b y_b = 0)"
        )));
    }
    let p_a = 1.0 / wealth;
    let prices = PricePair {
        a: p_a,
        b: q_b * p_a,
    };
    Ok(ChoiceRound::assemble(
        round,
        prices,
        y,
        false,
        Observation::Prices { prices, demand: y },
    ))
}

/// The record exactly as observed on input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Observation {
    Tokens {
        returns: ReturnPair,
        allocation: Allocation,
    },
    Prices {
        prices: PricePair,
        demand: Demand,
    },
}

/// One budget and the bundle chosen on it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChoiceRound {
    round: u32,
    prices: PricePair,
    demand: Demand,
    rescaled: bool,
    observed: Observation,
}

impl ChoiceRound {
    fn assemble(
        round: u32,
        prices: PricePair,
        demand: Demand,
        rescaled: bool,
        observed: Observation,
    ) -> Self {
        Self {
            round,
            prices,
            demand,
            rescaled,
            observed,
        }
    }

    /// Round from returns and points invested.
    pub fn from_tokens(round: u32, r: ReturnPair, t: Allocation, slack: f64) -> Result<Self> {
        let (demand, rescaled) = tokens_to_demand(r, t, slack)
            .map_err(|e| Error::Validation(format!("round {round}: {e}")))?;
        if demand.a + demand.b <= 0.0 {
            return Err(Error::Degenerate(format!("round {round}: zero expenditure")));
        }
        Ok(Self::assemble(
            round,
            returns_to_prices(r),
            demand,
            rescaled,
            Observation::Tokens {
                returns: r,
                allocation: t,
            },
        ))
    }

    /// Round from prices and demand. The expenditure `p·x` must lie in the
    /// band `[1 - slack/100, 1 + slack/100]`; demand is rescaled to exhaust a
    /// unit budget.
    pub fn from_prices(round: u32, p: PricePair, x: Demand, slack: f64) -> Result<Self> {
        let spend = p.cost(x);
        if spend <= 0.0 {
            return Err(Error::Degenerate(format!("round {round}: zero expenditure")));
        }
        let lo = 1.0 - slack / 100.0;
        let hi = 1.0 + slack / 100.0;
        if !(lo..=hi).contains(&spend) {
            return Err(Error::Validation(format!(
                "round {round}: expenditure p·x = {spend} outside slack band [{lo}, {hi}]"
            )));
        }
        let rescaled = (spend - 1.0).abs() > 1e-12;
        let demand = if rescaled { x.scaled(1.0 / spend) } else { x };
        Ok(Self::assemble(
            round,
            p,
            demand,
            rescaled,
            Observation::Prices {
                prices: p,
                demand: x,
            },
        ))
    }

    /// Round from budget-line intercepts and the chosen bundle.
    pub fn from_intercepts(round: u32, z: InterceptPair, x: Demand, slack: f64) -> Result<Self> {
        Self::from_prices(round, z.prices(), x, slack)
    }

    pub fn round(&self) -> u32 {
        self.round
    }

    pub fn prices(&self) -> PricePair {
        self.prices
    }

    pub fn returns(&self) -> ReturnPair {
        match self.observed {
            Observation::Tokens { returns, .. } => returns,
            Observation::Prices { .. } => prices_to_returns(self.prices),
        }
    }

    /// Normalized demand, `p·x = 1`.
    pub fn demand(&self) -> Demand {
        self.demand
    }

    /// Tokens implied by the normalized demand (sum 100).
    pub fn tokens(&self) -> Allocation {
        demand_to_tokens(prices_to_returns(self.prices), self.demand)
    }

    pub fn rescaled(&self) -> bool {
        self.rescaled
    }

    pub fn observed(&self) -> &Observation {
        &self.observed
    }

    /// Same round with asset labels exchanged.
    pub fn swapped(&self) -> Self {
        let observed = match self.observed {
            Observation::Tokens {
                returns,
                allocation,
            } => Observation::Tokens {
                returns: ReturnPair {
                    a: returns.b,
                    b: returns.a,
                },
                allocation: Allocation {
                    a: allocation.b,
                    b: allocation.a,
                },
            },
            Observation::Prices { prices, demand } => Observation::Prices {
                prices: prices.swapped(),
                demand: demand.swapped(),
            },
        };
        Self::assemble(
            self.round,
            self.prices.swapped(),
            self.demand.swapped(),
            self.rescaled,
            observed,
        )
    }

    pub(crate) fn with_round(mut self, round: u32) -> Self {
        self.round = round;
        self
    }
}

/// Where a dataset came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Human,
    Simulated,
    LlmDecision,
    LlmRecommendation,
    LlmPersonalized,
}

impl std::str::FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "human" => Ok(Self::Human),
            "simulated" => Ok(Self::Simulated),
            "llm_decision" => Ok(Self::LlmDecision),
            "llm_recommendation" => Ok(Self::LlmRecommendation),
            "llm_personalized" => Ok(Self::LlmPersonalized),
            other => Err(Error::Config(format!("unknown provenance `{other}`"))),
        }
    }
}

/// All rounds observed for one subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectDataset {
    subject_id: String,
    provenance: Provenance,
    rounds: Vec<ChoiceRound>,
}

impl SubjectDataset {
    /// Fails when `rounds` is empty or round indices do not strictly increase.
    pub fn new(
        subject_id: impl Into<String>,
        provenance: Provenance,
        rounds: Vec<ChoiceRound>,
    ) -> Result<Self> {
        let subject_id = subject_id.into();
        if rounds.is_empty() {
            return Err(Error::Validation(format!("subject `{subject_id}` has no rounds")));
        }
        for w in rounds.windows(2) {
            if w[1].round <= w[0].round {
                return Err(Error::Validation(format!(
                    "subject `{subject_id}`: round indices must strictly increase ({} then {})",
                    w[0].round, w[1].round
                )));
            }
        }
        Ok(Self {
            subject_id,
            provenance,
            rounds,
        })
    }

    pub fn subject_id(&self) -> &str {
        &self.subject_id
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn rounds(&self) -> &[ChoiceRound] {
        &self.rounds
    }

    pub fn len(&self) -> usize {
        self.rounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rounds.is_empty()
    }

    pub fn prices(&self) -> impl Iterator<Item = PricePair> + '_ {
        self.rounds.iter().map(|r| r.prices)
    }

    pub fn demands(&self) -> impl Iterator<Item = Demand> + '_ {
        self.rounds.iter().map(|r| r.demand)
    }

    /// Number of rounds whose input did not exhaust the budget exactly.
    pub fn rescaled_count(&self) -> usize {
        self.rounds.iter().filter(|r| r.rescaled).count()
    }

    /// First `s` rounds, order preserved.
    pub fn prefix(&self, s: usize) -> Result<Self> {
        if s == 0 || s > self.rounds.len() {
            return Err(Error::Validation(format!(
                "prefix size {s} out of range 1..={}",
                self.rounds.len()
            )));
        }
        Ok(Self {
            subject_id: self.subject_id.clone(),
            provenance: self.provenance,
            rounds: self.rounds[..s].to_vec(),
        })
    }

    /// Dataset with rounds reordered by `order` (a permutation) and renumbered 1..n.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let rounds = order
            .iter()
            .enumerate()
            .map(|(k, &i)| self.rounds[i].with_round(k as u32 + 1))
            .collect();
        Self::new(self.subject_id.clone(), self.provenance, rounds)
    }

    /// Dataset with asset labels exchanged in every round.
    pub fn swapped(&self) -> Self {
        Self {
            subject_id: self.subject_id.clone(),
            provenance: self.provenance,
            rounds: self.rounds.iter().map(ChoiceRound::swapped).collect(),
        }
    }

    /// Same rounds under another subject id.
    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.subject_id = id.into();
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn returns_prices_examples() {
        let p = returns_to_prices(ReturnPair::new(0.5, 0.9).unwrap());
        assert_eq!(p.a(), 0.02);
        assert_relative_eq!(p.b(), 1.0 / 90.0, max_relative = 1e-15);
        let back = prices_to_returns(p);
        assert_relative_eq!(back.a(), 0.5, max_relative = 1e-12);
        assert_relative_eq!(back.b(), 0.9, max_relative = 1e-12);

        let p = returns_to_prices(ReturnPair::new(0.01, 0.01).unwrap());
        assert_relative_eq!(p.a(), 1.0, max_relative = 1e-15);
        assert_relative_eq!(p.b(), 1.0, max_relative = 1e-15);
        let p = returns_to_prices(ReturnPair::new(1.0, 1.0).unwrap());
        assert_eq!((p.a(), p.b()), (0.01, 0.01));
    }

    #[test]
    fn prices_to_returns_examples() {
        let r = prices_to_returns(PricePair::new(1.0, 1.0).unwrap());
        assert_eq!((r.a(), r.b()), (0.01, 0.01));
        let r = prices_to_returns(PricePair::new(0.0237, 0.0125).unwrap());
        assert_relative_eq!(r.a(), 0.421_940_928_270_042_2, max_relative = 1e-12);
        assert_relative_eq!(r.b(), 0.8, max_relative = 1e-12);
    }

    #[test]
    fn nonpositive_inputs_are_domain_errors() {
        assert!(matches!(ReturnPair::new(0.0, 1.0), Err(Error::Domain(_))));
        assert!(matches!(ReturnPair::new(1.0, -0.1), Err(Error::Domain(_))));
        assert!(matches!(PricePair::new(-1.0, 1.0), Err(Error::Domain(_))));
        assert!(matches!(Demand::new(-1.0, 1.0), Err(Error::Domain(_))));
        assert!(matches!(ReturnPair::new(f64::NAN, 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn tokens_to_demand_examples() {
        let r = ReturnPair::new(0.5, 0.9).unwrap();
        let (x, flag) = tokens_to_demand(r, Allocation::new(100.0, 0.0).unwrap(), 5.0).unwrap();
        assert_eq!((x.a(), x.b(), flag), (50.0, 0.0, false));
        let (x, flag) = tokens_to_demand(r, Allocation::new(50.0, 50.0).unwrap(), 5.0).unwrap();
        assert_relative_eq!(x.a(), 25.0);
        assert_relative_eq!(x.b(), 45.0);
        assert!(!flag);

        // Table-style row: t_i = x_i / r_i with a sum of 100.17.
        let r = ReturnPair::new(0.42194, 0.8).unwrap();
        let (x, flag) = tokens_to_demand(r, Allocation::new(78.92, 21.25).unwrap(), 5.0).unwrap();
        assert!(flag);
        assert!((x.a() - 33.3).abs() < 0.1, "{x:?}");
        assert!((x.b() - 17.0).abs() < 0.1, "{x:?}");
        let p = returns_to_prices(r);
        assert_relative_eq!(p.cost(x), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn token_sum_outside_band_is_rejected() {
        let r = ReturnPair::new(0.5, 0.9).unwrap();
        let err = tokens_to_demand(r, Allocation::new(60.0, 52.0).unwrap(), 5.0).unwrap_err();
        assert!(err.to_string().contains("slack band"), "{err}");
        assert!(tokens_to_demand(r, Allocation::new(60.0, 45.0).unwrap(), 5.0).is_ok());
    }

    #[test]
    fn demand_to_tokens_examples() {
        let t = demand_to_tokens(ReturnPair::new(0.5, 0.5).unwrap(), Demand::new(25.0, 25.0).unwrap());
        assert_eq!((t.a(), t.b()), (50.0, 50.0));
        let t = demand_to_tokens(ReturnPair::new(0.5, 0.9).unwrap(), Demand::new(25.0, 45.0).unwrap());
        assert_relative_eq!(t.a(), 50.0);
        assert_relative_eq!(t.b(), 50.0);
        let t = demand_to_tokens(ReturnPair::new(1.0, 1.0).unwrap(), Demand::new(100.0, 0.0).unwrap());
        assert_eq!((t.a(), t.b()), (100.0, 0.0));
    }

    #[test]
    fn q_format_examples() {
        let c = normalize_q_format(1, 1.0, Demand::new(50.0, 50.0).unwrap()).unwrap();
        assert_eq!((c.prices().a(), c.prices().b()), (0.01, 0.01));
        assert_eq!((c.demand().a(), c.demand().b()), (50.0, 50.0));
        let c = normalize_q_format(1, 2.0, Demand::new(0.0, 50.0).unwrap()).unwrap();
        assert_eq!((c.prices().a(), c.prices().b()), (0.01, 0.02));
        let c = normalize_q_format(1, 1.0, Demand::new(1.0, 0.0).unwrap()).unwrap();
        assert_eq!((c.prices().a(), c.prices().b()), (1.0, 1.0));
        assert!(matches!(
            normalize_q_format(1, 1.0, Demand::new(0.0, 0.0).unwrap()),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn intercepts_give_unit_expenditure() {
        let z = InterceptPair::new(40.0, 80.0).unwrap();
        let c = ChoiceRound::from_intercepts(1, z, Demand::new(20.0, 40.0).unwrap(), 5.0).unwrap();
        assert_relative_eq!(c.prices().cost(c.demand()), 1.0, max_relative = 1e-15);
        assert!(!c.rescaled());
    }

    #[test]
    fn dataset_invariants() {
        let r = ReturnPair::new(0.5, 0.5).unwrap();
        let t = Allocation::new(50.0, 50.0).unwrap();
        let c1 = ChoiceRound::from_tokens(1, r, t, 5.0).unwrap();
        let c2 = ChoiceRound::from_tokens(2, r, t, 5.0).unwrap();
        assert!(SubjectDataset::new("s", Provenance::Human, vec![]).is_err());
        assert!(SubjectDataset::new("s", Provenance::Human, vec![c2, c1]).is_err());
        assert!(SubjectDataset::new("s", Provenance::Human, vec![c1, c1]).is_err());
        let d = SubjectDataset::new("s", Provenance::Human, vec![c1, c2]).unwrap();
        assert_eq!(d.prefix(2).unwrap(), d);
        assert_eq!(d.prefix(1).unwrap().len(), 1);
        assert!(d.prefix(0).is_err());
        assert!(d.prefix(3).is_err());
    }

    proptest! {
        #[test]
        fn price_return_round_trip(a in 1e-3f64..1e3, b in 1e-3f64..1e3) {
            let r = ReturnPair::new(a, b).unwrap();
            let back = prices_to_returns(returns_to_prices(r));
            prop_assert!(((back.a() - a) / a).abs() <= 1e-12);
            prop_assert!(((back.b() - b) / b).abs() <= 1e-12);
        }

        #[test]
        fn token_demand_round_trip(ra in 0.1f64..1.0, rb in 0.1f64..1.0, ta in 0.0f64..=100.0) {
            let r = ReturnPair::new(ra, rb).unwrap();
            let t = Allocation::new(ta, 100.0 - ta).unwrap();
            let (x, _) = tokens_to_demand(r, t, DEFAULT_SLACK).unwrap();
            let back = demand_to_tokens(r, x);
            prop_assert!((back.a() - t.a()).abs() <= 1e-9);
            prop_assert!((back.b() - t.b()).abs() <= 1e-9);
        }

        #[test]
        fn stored_rounds_satisfy_budget(ra in 0.1f64..1.0, rb in 0.1f64..1.0,
                                        ta in 0.0f64..=100.0, extra in -5.0f64..=5.0) {
            let r = ReturnPair::new(ra, rb).unwrap();
            let tb = (100.0 - ta + extra).max(0.0);
            let t = Allocation::new(ta, tb).unwrap();
            if let Ok(c) = ChoiceRound::from_tokens(1, r, t, DEFAULT_SLACK) {
                prop_assert!((c.prices().cost(c.demand()) - 1.0).abs() <= BUDGET_TOL);
            }
        }
    }
}
