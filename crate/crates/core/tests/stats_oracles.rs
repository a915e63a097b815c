//! Statistics checked against reference values computed independently
//! (numpy/scipy and exact rational arithmetic).

use choicelab::stats::{regress_alignment, summarize, welch_t_test, RobustCov};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde_json::Value;

fn fixture() -> Value {
    let text = include_str!("fixtures/stats_reference.json");
    serde_json::from_str(text).unwrap()
}

fn floats(v: &Value) -> Vec<f64> {
    v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

#[test]
fn summarize_matches_reference() {
    let f = &fixture()["summarize"];
    let s = summarize(&floats(&f["values"])).unwrap();
    let p = floats(&f["p"]);
    for (got, want) in [s.p5, s.p25, s.p50, s.p75, s.p95].into_iter().zip(p) {
        assert!(close(got, want, 1e-12), "{got} vs {want}");
    }
    assert!(close(s.mean, f["mean"].as_f64().unwrap(), 1e-12));
    assert!(close(s.std, f["std"].as_f64().unwrap(), 1e-12));
}

#[test]
fn regression_matches_normal_equations() {
    let f = &fixture()["regression"];
    let (x, y) = (floats(&f["x"]), floats(&f["y"]));
    let r = regress_alignment(&x, &y, RobustCov::Hc1).unwrap();
    assert!((r.alpha - 82.0 / 905.0).abs() < 1e-10);
    assert!((r.gamma - 176.0 / 181.0).abs() < 1e-10);
    let se = floats(&f["hc1_se"]);
    assert!((r.se_alpha - se[0]).abs() < 1e-10 && (r.se_gamma - se[1]).abs() < 1e-10);
    let p = floats(&f["hc1_p"]);
    assert!((r.p_alpha - p[0]).abs() < 1e-9);
    assert!(close(r.p_gamma, p[1], 1e-6));

    let r0 = regress_alignment(&x, &y, RobustCov::Hc0).unwrap();
    let se = floats(&f["hc0_se"]);
    assert!((r0.se_alpha - se[0]).abs() < 1e-10 && (r0.se_gamma - se[1]).abs() < 1e-10);
    assert_eq!((r0.alpha, r0.gamma), (r.alpha, r.gamma));
}

#[test]
fn welch_matches_hand_computation() {
    let f = &fixture()["welch"];
    let w = welch_t_test(&floats(&f["a"]), &floats(&f["b"])).unwrap();
    assert!((w.t - f["t"].as_f64().unwrap()).abs() < 1e-9);
    assert!((w.dof - f["dof"].as_f64().unwrap()).abs() < 1e-9);
    assert!((w.p - f["scipy_p"].as_f64().unwrap()).abs() < 1e-8);
}

#[test]
fn welch_separates_shifted_normals() {
    let f = &fixture()["welch_normal"];
    let mut rdr = csv::Reader::from_path(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/welch_normal.csv")).unwrap();
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for rec in rdr.records() {
        let rec = rec.unwrap();
        a.push(rec[0].parse::<f64>().unwrap());
        b.push(rec[1].parse::<f64>().unwrap());
    }
    assert_eq!(a.len(), 1000);
    let w = welch_t_test(&a, &b).unwrap();
    assert!(w.p < 0.001);
    assert!((w.t - f["t"].as_f64().unwrap()).abs() < 1e-9);
    assert!((w.dof - f["dof"].as_f64().unwrap()).abs() < 1e-6);
}

fn std_normal(rng: &mut ChaCha20Rng) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn replicate(x: &[f64], reps: usize, seed: u64) -> Vec<(f64, f64)> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    (0..reps)
        .map(|_| {
            let y: Vec<f64> = x.iter().map(|v| 0.2 + 0.7 * v + std_normal(&mut rng)).collect();
            let r = regress_alignment(x, &y, RobustCov::Hc1).unwrap();
            let ss: f64 = x.iter().zip(&y).map(|(xi, yi)| (yi - r.alpha - r.gamma * xi).powi(2)).sum();
            (r.se_gamma.powi(2), ss / (n - 2.0) / sxx)
        })
        .collect()
}

fn mean_sd(v: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = v.clone().count() as f64;
    let m = v.clone().sum::<f64>() / n;
    (m, (v.map(|d| (d - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
}

/// With equal leverage at every point the HC1 slope variance coincides
/// with the classical one.
#[test]
fn hc1_equals_classical_for_balanced_design() {
    let x: Vec<f64> = (0..40).map(|i| (i % 2) as f64).collect();
    for (hc1, classical) in replicate(&x, 10_000, 11) {
        assert!((hc1 - classical).abs() <= 1e-9 * classical);
    }
}

/// Homoskedastic errors, unequal leverage: both variance estimators average
/// to their analytic expectations within three standard errors. For unit
/// error variance, E[classical] = 1/Sxx and
/// E[HC1] = n/(n-2) · Σ w_i² (1 - h_ii) / Sxx², with w_i = x_i - x̄.
#[test]
fn hc1_and_classical_match_their_expectations() {
    let n = 40;
    let x: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let w: Vec<f64> = x.iter().map(|v| v - mx).collect();
    let sxx: f64 = w.iter().map(|v| v * v).sum();
    let e_classical = 1.0 / sxx;
    let e_hc1 = nf / (nf - 2.0)
        * w.iter().map(|wi| wi * wi * (1.0 - 1.0 / nf - wi * wi / sxx)).sum::<f64>()
        / (sxx * sxx);
    let reps = 10_000;
    let draws = replicate(&x, reps, 12);
    let root = (reps as f64).sqrt();
    let (m, sd) = mean_sd(draws.iter().map(|d| d.0));
    assert!((m - e_hc1).abs() <= 3.0 * sd / root, "hc1 {m} vs {e_hc1}");
    let (m, sd) = mean_sd(draws.iter().map(|d| d.1));
    assert!((m - e_classical).abs() <= 3.0 * sd / root, "classical {m} vs {e_classical}");
}
