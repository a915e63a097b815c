//! Summary statistics, the interquartile representative filter, Welch's
//! t-test and univariate OLS with heteroskedasticity-robust errors.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::da_model::DaParams;
use crate::error::{Error, Result};

pub const PERCENTILES: [f64; 5] = [5.0, 25.0, 50.0, 75.0, 95.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (`n - 1` denominator); zero when `n = 1`.
    pub std: f64,
    pub p5: f64,
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
    pub p95: f64,
}

/// Percentile `q` (0-100) of sorted data, interpolating linearly between
/// order statistics at position `(n - 1)·q/100`.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * q / 100.0;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn mean_var(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    let var = if values.len() > 1 { ss / (n - 1.0) } else { 0.0 };
    (mean, var)
}

pub fn summarize(values: &[f64]) -> Result<SummaryRow> {
    if values.is_empty() {
        return Err(Error::Validation("cannot summarize an empty sample".into()));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::Validation("sample contains NaN".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let [p5, p25, p50, p75, p95] = PERCENTILES.map(|q| percentile_sorted(&sorted, q));
    let (mean, var) = mean_var(values);
    Ok(SummaryRow {
        n: values.len(),
        mean,
        std: var.sqrt(),
        p5,
        p25,
        p50,
        p75,
        p95,
    })
}

/// Indices of subjects whose `β` and `ρ` both lie in the closed
/// interquartile box of the sample.
pub fn representative_filter(params: &[DaParams]) -> Result<Vec<usize>> {
    if params.len() < 4 {
        return Err(Error::Validation(format!(
            "representative filter needs at least 4 subjects, got {}",
            params.len()
        )));
    }
    let quartiles = |f: fn(&DaParams) -> f64| {
        let mut v: Vec<f64> = params.iter().map(f).collect();
        v.sort_by(f64::total_cmp);
        (percentile_sorted(&v, 25.0), percentile_sorted(&v, 75.0))
    };
    let (b25, b75) = quartiles(DaParams::beta);
    let (r25, r75) = quartiles(DaParams::rho);
    Ok(params
        .iter()
        .enumerate()
        .filter(|(_, p)| (b25..=b75).contains(&p.beta()) && (r25..=r75).contains(&p.rho()))
        .map(|(i, _)| i)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RobustCov {
    Hc0,
    #[default]
    Hc1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    pub alpha: f64,
    pub gamma: f64,
    pub se_alpha: f64,
    pub se_gamma: f64,
    pub p_alpha: f64,
    pub p_gamma: f64,
    pub n: usize,
    pub cov: RobustCov,
}

fn normal_two_sided(estimate: f64, se: f64) -> f64 {
    if se == 0.0 {
        return if estimate == 0.0 { 1.0 } else { 0.0 };
    }
    let z = (estimate / se).abs();
    2.0 * (1.0 - Normal::standard().cdf(z))
}

/// OLS of `estimate` on `truth` with intercept: `θ̂ = α + γ θ⁰ + ε`.
pub fn regress_alignment(truth: &[f64], estimate: &[f64], cov: RobustCov) -> Result<RegressionResult> {
    if truth.len() != estimate.len() {
        return Err(Error::Validation(format!(
            "length mismatch: {} truths, {} estimates",
            truth.len(),
            estimate.len()
        )));
    }
    let n = truth.len();
    if n < 3 {
        return Err(Error::Validation(format!("regression needs n >= 3, got {n}")));
    }
    let nf = n as f64;
    let mx = truth.iter().sum::<f64>() / nf;
    let my = estimate.iter().sum::<f64>() / nf;
    let sxx: f64 = truth.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx <= f64::EPSILON * nf * mx.abs().max(1.0).powi(2) {
        return Err(Error::Singular("regressor has zero variance".into()));
    }
    let sxy: f64 = truth.iter().zip(estimate).map(|(x, y)| (x - mx) * (y - my)).sum();
    let gamma = sxy / sxx;
    let alpha = my - gamma * mx;

    // Sandwich (X'X)⁻¹ X' diag(e²) X (X'X)⁻¹ for X = [1, x].
    let sx: f64 = truth.iter().sum();
    let sxx_raw: f64 = truth.iter().map(|x| x * x).sum();
    let det = nf * sxx_raw - sx * sx;
    let inv = [[sxx_raw / det, -sx / det], [-sx / det, nf / det]];
    let mut meat = [[0.0; 2]; 2];
    for (x, y) in truth.iter().zip(estimate) {
        let e2 = (y - alpha - gamma * x).powi(2);
        meat[0][0] += e2;
        meat[0][1] += e2 * x;
        meat[1][1] += e2 * x * x;
    }
    meat[1][0] = meat[0][1];
    let mut v = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                for l in 0..2 {
                    v[i][j] += inv[i][k] * meat[k][l] * inv[l][j];
                }
            }
        }
    }
    let scale = match cov {
        RobustCov::Hc0 => 1.0,
        RobustCov::Hc1 => nf / (nf - 2.0),
    };
    let se_alpha = (v[0][0] * scale).max(0.0).sqrt();
    let se_gamma = (v[1][1] * scale).max(0.0).sqrt();
    Ok(RegressionResult {
        alpha,
        gamma,
        se_alpha,
        se_gamma,
        p_alpha: normal_two_sided(alpha, se_alpha),
        p_gamma: normal_two_sided(gamma, se_gamma),
        n,
        cov,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchResult {
    pub t: f64,
    pub dof: f64,
    pub p: f64,
}

/// Welch's unequal-variance t-test with Satterthwaite degrees of freedom.
/// The two-sided p-value comes from the Student-t CDF (regularized
/// incomplete beta, accurate well beyond 1e-8).
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<WelchResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Validation("Welch test needs at least 2 values per sample".into()));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (qa, qb) = (va / a.len() as f64, vb / b.len() as f64);
    let se2 = qa + qb;
    if se2 == 0.0 {
        let dof = (a.len() + b.len() - 2) as f64;
        return Ok(if ma == mb {
            WelchResult { t: 0.0, dof, p: 1.0 }
        } else {
            WelchResult {
                t: (ma - mb).signum() * f64::INFINITY,
                dof,
                p: 0.0,
            }
        });
    }
    let t = (ma - mb) / se2.sqrt();
    let dof = se2 * se2 / (qa * qa / (a.len() - 1) as f64 + qb * qb / (b.len() - 1) as f64);
    let dist = StudentsT::new(0.0, 1.0, dof).map_err(|e| Error::Domain(e.to_string()))?;
    // Upper tail through the survival function keeps tiny p-values accurate.
    let p = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok(WelchResult { t, dof, p })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn constant_sample() {
        let s = summarize(&[1.0, 1.0, 1.0]).unwrap();
        assert_eq!((s.p5, s.p50, s.p95, s.mean, s.std), (1.0, 1.0, 1.0, 1.0, 0.0));
        assert!(summarize(&[]).is_err());
    }

    #[test]
    fn integer_grid() {
        let v: Vec<f64> = (0..=100).map(f64::from).collect();
        let s = summarize(&v).unwrap();
        assert_eq!(s.p50, 50.0);
        assert_eq!(s.mean, 50.0);
        assert_eq!((s.p5, s.p25, s.p75, s.p95), (5.0, 25.0, 75.0, 95.0));
    }

    #[test]
    fn percentiles_hit_order_statistics() {
        let v = [3.0, -1.0, 7.5, 2.0, 10.0];
        let mut sorted = v.to_vec();
        sorted.sort_by(f64::total_cmp);
        for k in 0..v.len() {
            let q = 100.0 * k as f64 / (v.len() - 1) as f64;
            assert_eq!(percentile_sorted(&sorted, q), sorted[k]);
        }
    }

    fn p(b: f64, r: f64) -> DaParams {
        DaParams::new(b, r).unwrap()
    }

    #[test]
    fn filter_identical_keeps_all() {
        let v = vec![p(0.1, 0.5); 6];
        assert_eq!(representative_filter(&v).unwrap().len(), 6);
        assert!(representative_filter(&v[..3]).is_err());
    }

    #[test]
    fn filter_grid_keeps_quarter() {
        // 9×9 grid: the IQR on 0..8 is [2, 6], five of nine values per axis.
        let mut v = Vec::new();
        for i in 0..9 {
            for j in 0..9 {
                v.push(p(0.1 * i as f64, 0.2 + 0.1 * j as f64));
            }
        }
        let kept = representative_filter(&v).unwrap();
        let expected = (0..9).filter(|&i| (2..=6).contains(&i)).count().pow(2);
        assert_eq!(kept.len(), expected);
        assert_eq!(expected, 25);
    }

    #[test]
    fn filter_drops_outlier() {
        let mut v: Vec<DaParams> = (0..8).map(|i| p(0.1, 0.5 + 0.01 * i as f64)).collect();
        v.push(p(2.5, 4.0));
        let kept = representative_filter(&v).unwrap();
        assert!(!kept.contains(&8));
    }

    #[test]
    fn perfect_and_flat_alignment() {
        let x = [0.3, 0.5, 0.8, 1.1, 1.4];
        let r = regress_alignment(&x, &x, RobustCov::Hc1).unwrap();
        assert_relative_eq!(r.gamma, 1.0, epsilon = 1e-12);
        assert!(r.alpha.abs() < 1e-12 && r.se_gamma < 1e-12);
        let flat = regress_alignment(&x, &[0.7; 5], RobustCov::Hc1).unwrap();
        assert!(flat.gamma.abs() < 1e-12);
        assert!(matches!(
            regress_alignment(&[1.0; 4], &x[..4], RobustCov::Hc1),
            Err(Error::Singular(_))
        ));
        assert!(regress_alignment(&x, &x[..4], RobustCov::Hc1).is_err());
    }

    #[test]
    fn slope_scales_inversely() {
        let x = [0.1, 0.4, 0.5, 0.9, 1.3, 2.0];
        let y = [0.3, 0.2, 0.8, 1.1, 1.0, 2.2];
        let c = 3.5;
        let xs: Vec<f64> = x.iter().map(|v| v * c).collect();
        let a = regress_alignment(&x, &y, RobustCov::Hc1).unwrap();
        let b = regress_alignment(&xs, &y, RobustCov::Hc1).unwrap();
        assert_relative_eq!(b.gamma * c, a.gamma, max_relative = 1e-12);
        assert_relative_eq!(b.alpha, a.alpha, max_relative = 1e-12);
    }

    #[test]
    fn welch_identical_samples() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let r = welch_t_test(&a, &a).unwrap();
        assert_eq!((r.t, r.p), (0.0, 1.0));
        let r = welch_t_test(&[2.0, 2.0], &[2.0, 2.0, 2.0]).unwrap();
        assert_eq!((r.t, r.p), (0.0, 1.0));
    }
}
