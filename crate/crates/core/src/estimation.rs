//! Recovery of `(β, ρ)` by least squares on token shares.
//!
//! A coarse grid locates the basin, then a Nelder-Mead simplex refines in
//! the unconstrained coordinates `b = ln(β - β_min)`, `r = ln ρ`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::da_model::{optimal_demand, DaParams};
use crate::data::SubjectDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub beta_min: f64,
    pub beta_max: f64,
    pub beta_step: f64,
    pub rho_min: f64,
    pub rho_max: f64,
    /// Log-spaced points over `[rho_min, rho_max]`, both ends included.
    pub rho_points: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            beta_min: -0.95,
            beta_max: 3.0,
            beta_step: 0.05,
            rho_min: 0.05,
            rho_max: 5.0,
            rho_points: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineConfig {
    pub max_evals: usize,
    /// Simplex diameter (in transformed coordinates) at which to stop.
    pub tol: f64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            max_evals: 2000,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimationConfig {
    pub grid: GridConfig,
    pub refine: RefineConfig,
}

impl EstimationConfig {
    pub fn validate(&self) -> Result<()> {
        let g = &self.grid;
        if !(g.beta_min > -1.0 && g.beta_max >= g.beta_min && g.beta_step > 0.0) {
            return Err(Error::Config(format!(
                "grid.beta_min/max/step = {}/{}/{} must satisfy -1 < min <= max, step > 0",
                g.beta_min, g.beta_max, g.beta_step
            )));
        }
        if !(g.rho_min > 0.0 && g.rho_max >= g.rho_min && g.rho_points >= 1) {
            return Err(Error::Config(format!(
                "grid.rho_min/max/points = {}/{}/{} must satisfy 0 < min <= max, points >= 1",
                g.rho_min, g.rho_max, g.rho_points
            )));
        }
        if self.refine.tol <= 0.0 {
            return Err(Error::Config("refine.tol must be positive".into()));
        }
        Ok(())
    }

    pub fn beta_grid(&self) -> Vec<f64> {
        let g = &self.grid;
        let steps = ((g.beta_max - g.beta_min) / g.beta_step + 1e-9).floor() as usize;
        (0..=steps).map(|i| g.beta_min + i as f64 * g.beta_step).collect()
    }

    pub fn rho_grid(&self) -> Vec<f64> {
        let g = &self.grid;
        if g.rho_points == 1 {
            return vec![g.rho_min];
        }
        let (lo, hi) = (g.rho_min.ln(), g.rho_max.ln());
        let last = (g.rho_points - 1) as f64;
        (0..g.rho_points)
            .map(|i| (lo + (hi - lo) * i as f64 / last).exp())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: DaParams,
    pub loss: f64,
    pub grid_best: DaParams,
    pub grid_loss: f64,
    /// The simplex shrank below `refine.tol` before the evaluation budget ran out.
    pub converged: bool,
    pub evaluations: usize,
    /// False when the data cannot pin down two parameters (fewer than two
    /// distinct rounds); refinement is skipped.
    pub identified: bool,
}

/// Mean over rounds of the squared distance between observed and predicted
/// token shares, `((t̂_A - t_A)/100)² + ((t̂_B - t_B)/100)²`.
pub fn fit_loss(ds: &SubjectDataset, params: DaParams) -> f64 {
    let total: f64 = ds
        .rounds()
        .iter()
        .map(|c| {
            let p = c.prices();
            let (x, fit) = (c.demand(), optimal_demand(p, params).demand);
            let da = p.a() * (fit.a() - x.a());
            let db = p.b() * (fit.b() - x.b());
            da * da + db * db
        })
        .sum();
    total / ds.len() as f64
}

fn distinct_rounds(ds: &SubjectDataset) -> usize {
    let mut seen: Vec<[u64; 4]> = ds
        .rounds()
        .iter()
        .map(|c| {
            let (p, x) = (c.prices(), c.demand());
            [p.a(), p.b(), x.a(), x.b()].map(f64::to_bits)
        })
        .collect();
    seen.sort_unstable();
    seen.dedup();
    seen.len()
}

fn grid_search(ds: &SubjectDataset, config: &EstimationConfig) -> (DaParams, f64, usize) {
    let betas = config.beta_grid();
    let rhos = config.rho_grid();
    let points: Vec<(f64, f64)> = betas
        .iter()
        .flat_map(|&b| rhos.iter().map(move |&r| (b, r)))
        .collect();
    let losses: Vec<f64> = points
        .par_iter()
        .map(|&(b, r)| fit_loss(ds, DaParams::new(b, r).expect("grid inside parameter domain")))
        .collect();
    // Points are in lexicographic (β, ρ) order, so the first strict minimum
    // wins ties regardless of evaluation order.
    let mut best = 0;
    for (i, &l) in losses.iter().enumerate() {
        if l < losses[best] {
            best = i;
        }
    }
    let (b, r) = points[best];
    (DaParams::new(b, r).unwrap(), losses[best], points.len())
}

struct Simplex {
    beta_floor: f64,
}

impl Simplex {
    fn to_params(&self, v: [f64; 2]) -> Option<DaParams> {
        DaParams::new(self.beta_floor + v[0].exp(), v[1].exp()).ok()
    }

    /// Points on the lower β bound are nudged inside it.
    fn from_params(&self, p: DaParams, nudge: f64) -> [f64; 2] {
        [(p.beta() - self.beta_floor).max(nudge).ln(), p.rho().ln()]
    }
}

fn diameter(pts: &[([f64; 2], f64); 3]) -> f64 {
    let mut d: f64 = 0.0;
    for i in 0..3 {
        for j in i + 1..3 {
            let (a, b) = (pts[i].0, pts[j].0);
            d = d.max(((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt());
        }
    }
    d
}

fn lerp(a: [f64; 2], b: [f64; 2], t: f64) -> [f64; 2] {
    [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
}

/// Nelder-Mead with standard coefficients. Returns the best vertex, its
/// loss, evaluations used and whether the diameter test fired.
fn nelder_mead(
    ds: &SubjectDataset,
    start: DaParams,
    start_loss: f64,
    config: &EstimationConfig,
) -> (DaParams, f64, usize, bool) {
    let sx = Simplex {
        beta_floor: config.grid.beta_min,
    };
    let mut evals = 0usize;
    let f = |v: [f64; 2], evals: &mut usize| -> f64 {
        *evals += 1;
        sx.to_params(v).map_or(f64::INFINITY, |p| fit_loss(ds, p))
    };
    let nudge = 1e-3 * config.grid.beta_step;
    let x0 = sx.from_params(start, nudge);
    let f0 = if start.beta() - sx.beta_floor < nudge {
        f(x0, &mut evals)
    } else {
        start_loss
    };
    let step_b = config.grid.beta_step / (start.beta() - sx.beta_floor).max(nudge);
    let step_r = if config.grid.rho_points > 1 {
        (config.grid.rho_max / config.grid.rho_min).ln() / (config.grid.rho_points - 1) as f64
    } else {
        0.1
    };
    let x1 = [x0[0] + step_b, x0[1]];
    let x2 = [x0[0], x0[1] + step_r];
    let mut pts = [(x0, f0), (x1, f(x1, &mut evals)), (x2, f(x2, &mut evals))];

    let mut converged = false;
    loop {
        pts.sort_by(|a, b| a.1.total_cmp(&b.1));
        if diameter(&pts) < config.refine.tol {
            converged = true;
            break;
        }
        if evals >= config.refine.max_evals {
            break;
        }
        let centroid = lerp(pts[0].0, pts[1].0, 0.5);
        let worst = pts[2];
        let xr = lerp(centroid, worst.0, -1.0);
        let fr = f(xr, &mut evals);
        if fr < pts[0].1 {
            let xe = lerp(centroid, worst.0, -2.0);
            let fe = f(xe, &mut evals);
            pts[2] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < pts[1].1 {
            pts[2] = (xr, fr);
        } else {
            let (xc, fc) = if fr < worst.1 {
                let xc = lerp(centroid, xr, 0.5);
                (xc, f(xc, &mut evals))
            } else {
                let xc = lerp(centroid, worst.0, 0.5);
                (xc, f(xc, &mut evals))
            };
            if fc < worst.1.min(fr) {
                pts[2] = (xc, fc);
            } else {
                let best = pts[0].0;
                for p in pts.iter_mut().skip(1) {
                    p.0 = lerp(best, p.0, 0.5);
                    p.1 = f(p.0, &mut evals);
                }
            }
        }
    }
    pts.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (v, loss) = pts[0];
    (sx.to_params(v).unwrap_or(start), loss, evals, converged)
}

/// Two-stage fit: grid search, then simplex refinement from the grid optimum.
pub fn recover_params(ds: &SubjectDataset, config: &EstimationConfig) -> Result<FitResult> {
    config.validate()?;
    let (grid_best, grid_loss, grid_evals) = grid_search(ds, config);
    if distinct_rounds(ds) < 2 {
        return Ok(FitResult {
            params: grid_best,
            loss: grid_loss,
            grid_best,
            grid_loss,
            converged: false,
            evaluations: grid_evals,
            identified: false,
        });
    }
    let (params, loss, evals, converged) = nelder_mead(ds, grid_best, grid_loss, config);
    let (params, loss) = if loss <= grid_loss {
        (params, loss)
    } else {
        (grid_best, grid_loss)
    };
    Ok(FitResult {
        params,
        loss,
        grid_best,
        grid_loss,
        converged,
        evaluations: grid_evals + evals,
        identified: true,
    })
}
