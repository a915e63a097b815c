//! Random budgets and synthetic disappointment-averse subjects.
//!
//! Randomness comes from ChaCha20 seeded with a `u64`, which gives the same
//! stream on every platform.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::da_model::{optimal_demand, DaParams};
use crate::data::{
    demand_to_tokens, returns_to_prices, Allocation, ChoiceRound, Provenance, ReturnPair,
    SubjectDataset, DEFAULT_SLACK,
};
use crate::error::{Error, Result};

pub const RETURN_MIN: f64 = 0.1;
pub const RETURN_MAX: f64 = 1.0;
/// At least one return per round must reach this value.
pub const RETURN_FLOOR_OF_MAX: f64 = 0.5;

/// Sample sizes used when studying how recommendations improve with data.
pub const SAMPLE_SIZES: [usize; 5] = [1, 10, 25, 75, 175];

/// Interquartile box of fitted human parameters, `[β_25, β_75] × [ρ_25, ρ_75]`.
pub const REPRESENTATIVE_BOX: ParamBox = ParamBox {
    beta: (-0.07, 0.20),
    rho: (0.38, 0.95),
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamBox {
    pub beta: (f64, f64),
    pub rho: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetSchedule {
    pub seed: u64,
    pub rounds: Vec<ReturnPair>,
}

impl BudgetSchedule {
    /// Schedule with every return rounded to `decimals` places, as shown to
    /// a chat model. Rounding cannot break the sampling constraints.
    pub fn rounded(&self, decimals: u32) -> Result<Self> {
        let k = 10f64.powi(decimals as i32);
        let rounds = self
            .rounds
            .iter()
            .map(|r| ReturnPair::new((r.a() * k).round() / k, (r.b() * k).round() / k))
            .collect::<Result<_>>()?;
        Ok(Self {
            seed: self.seed,
            rounds,
        })
    }

    pub fn len(&self) -> usize {
        self.rounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rounds.is_empty()
    }
}

/// Rejection sampler for return pairs; keeps draw counts for diagnostics.
pub struct BudgetSampler {
    rng: ChaCha20Rng,
    pub draws: u64,
    pub accepted: u64,
}

impl BudgetSampler {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha20Rng::seed_from_u64(seed),
            draws: 0,
            accepted: 0,
        }
    }

    fn uniform_return(&mut self) -> f64 {
        RETURN_MIN + (RETURN_MAX - RETURN_MIN) * self.rng.random::<f64>()
    }

    /// One candidate pair, `None` when rejected.
    pub fn try_pair(&mut self) -> Option<ReturnPair> {
        self.draws += 1;
        let (a, b) = (self.uniform_return(), self.uniform_return());
        if a.max(b) < RETURN_FLOOR_OF_MAX {
            return None;
        }
        self.accepted += 1;
        Some(ReturnPair::new(a, b).expect("returns are positive"))
    }

    pub fn next_pair(&mut self) -> ReturnPair {
        loop {
            if let Some(r) = self.try_pair() {
                return r;
            }
        }
    }
}

pub fn generate_budgets(seed: u64, n_rounds: usize) -> Result<BudgetSchedule> {
    if n_rounds == 0 {
        return Err(Error::Validation("a schedule needs at least one round".into()));
    }
    let mut sampler = BudgetSampler::new(seed);
    let rounds = (0..n_rounds).map(|_| sampler.next_pair()).collect();
    Ok(BudgetSchedule { seed, rounds })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSubject {
    pub subject_id: String,
    pub params: DaParams,
    pub dataset: SubjectDataset,
}

/// Optimal choices of `params` on every budget, stored as tokens.
pub fn simulate_subject(
    subject_id: &str,
    params: DaParams,
    schedule: &[ReturnPair],
) -> Result<SyntheticSubject> {
    let rounds = schedule
        .iter()
        .enumerate()
        .map(|(k, &r)| {
            let x = optimal_demand(returns_to_prices(r), params).demand;
            let t = demand_to_tokens(r, x);
            // Pin the sum so float noise is not reported as a rescale.
            let t = Allocation::new(t.a(), 100.0 - t.a())?;
            ChoiceRound::from_tokens(k as u32 + 1, r, t, DEFAULT_SLACK)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SyntheticSubject {
        subject_id: subject_id.to_string(),
        params,
        dataset: SubjectDataset::new(subject_id, Provenance::Simulated, rounds)?,
    })
}

/// Adds independent uniform noise in `[-amplitude, amplitude]` to each
/// round's `t_A`, clamped to `[0, 100]`, with `t_B = 100 - t_A`.
pub fn jitter_tokens(ds: &SubjectDataset, amplitude: f64, seed: u64) -> Result<SubjectDataset> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let rounds = ds
        .rounds()
        .iter()
        .map(|c| {
            let noise = rng.random_range(-amplitude..=amplitude);
            let ta = (c.tokens().a() + noise).clamp(0.0, 100.0);
            let t = Allocation::new(ta, 100.0 - ta)?;
            ChoiceRound::from_tokens(c.round(), c.returns(), t, DEFAULT_SLACK)
        })
        .collect::<Result<Vec<_>>>()?;
    SubjectDataset::new(ds.subject_id(), ds.provenance(), rounds)
}

/// `n` parameter pairs drawn uniformly from `bounds`, with ids `sim001`, ….
pub fn sample_params(seed: u64, n: usize, bounds: ParamBox) -> Vec<(String, DaParams)> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let width = n.max(1).to_string().len().max(3);
    (0..n)
        .map(|i| {
            let b = rng.random_range(bounds.beta.0..=bounds.beta.1);
            let r = rng.random_range(bounds.rho.0..=bounds.rho.1);
            let id = format!("sim{:0width$}", i + 1);
            (id, DaParams::new(b, r).expect("box inside parameter domain"))
        })
        .collect()
}

#[derive(Debug, Deserialize, Serialize)]
struct ParamsRow {
    subject_id: String,
    beta: f64,
    rho: f64,
}

/// Reads a `subject_id,beta,rho` file. Errors name the offending line.
pub fn read_params_file(path: impl AsRef<Path>) -> Result<Vec<(String, DaParams)>> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Validation(format!("{}: {other:?}", path.display())),
    })?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header != ["subject_id", "beta", "rho"] {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            row: 1,
            column: "header".into(),
            message: format!("expected `subject_id,beta,rho`, found `{}`", header.join(",")),
        });
    }
    let mut out = Vec::new();
    for (i, row) in reader.deserialize::<ParamsRow>().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            row: line,
            column: match e.kind() {
                csv::ErrorKind::Deserialize { err, .. } => err
                    .field()
                    .and_then(|f| header.get(f as usize).cloned())
                    .unwrap_or_else(|| "?".into()),
                _ => "?".into(),
            },
            message: e.to_string(),
        })?;
        let params = DaParams::new(row.beta, row.rho).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            row: line,
            column: if row.beta > -1.0 { "rho" } else { "beta" }.into(),
            message: e.to_string(),
        })?;
        out.push((row.subject_id, params));
    }
    if out.is_empty() {
        return Err(Error::Validation(format!("{}: no parameter rows", path.display())));
    }
    Ok(out)
}

pub fn write_params_file(params: &[(String, DaParams)], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Validation(format!("{other:?}")),
        })?;
    for (id, p) in params {
        w.serialize(ParamsRow {
            subject_id: id.clone(),
            beta: p.beta(),
            rho: p.rho(),
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
