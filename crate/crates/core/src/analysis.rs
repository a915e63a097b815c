//! Per-subject index reports, summary panels and learning curves, with
//! their CSV and JSON Lines renderings.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::da_model::DaParams;
use crate::data::SubjectDataset;
use crate::error::{Error, Result};
use crate::estimation::{recover_params, EstimationConfig};
use crate::eu_deviation::deut_index;
use crate::rationality::{ccei, fosd_violations};
use crate::stats::{regress_alignment, summarize, RobustCov, SummaryRow};

pub const INDEX_HEADER: [&str; 8] = [
    "subject_id", "ccei", "deut", "fosd_count", "beta_hat", "rho_hat", "loss", "flags",
];

/// Separates a replicate suffix from a subject id: `sim001@2` belongs to `sim001`.
pub const REPLICATE_SEPARATOR: char = '@';

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexReport {
    pub subject_id: String,
    pub ccei: f64,
    pub deut: f64,
    pub fosd_count: usize,
    pub beta_hat: f64,
    pub rho_hat: f64,
    pub loss: f64,
    /// `;`-separated diagnostics, empty when clean.
    pub flags: String,
}

impl IndexReport {
    pub fn has_flags(&self) -> bool {
        !self.flags.is_empty()
    }
}

pub fn analyze_subject(ds: &SubjectDataset, config: &EstimationConfig) -> Result<IndexReport> {
    let mut flags = Vec::new();
    let c = ccei(ds);
    let deut = match deut_index(ds) {
        Ok(d) => {
            if d.strict_tie {
                flags.push("deut_strict_tie".to_string());
            }
            d.deut
        }
        Err(Error::Degenerate(_)) => {
            flags.push("deut_degenerate".to_string());
            f64::NAN
        }
        Err(e) => return Err(e),
    };
    let fosd = fosd_violations(ds);
    let fit = recover_params(ds, config)?;
    if !fit.identified {
        flags.push("unidentified".into());
    } else if !fit.converged {
        flags.push("not_converged".into());
    }
    let rescaled = ds.rescaled_count();
    if rescaled > 0 {
        flags.push(format!("rescaled={rescaled}"));
    }
    Ok(IndexReport {
        subject_id: ds.subject_id().to_string(),
        ccei: c.ccei,
        deut,
        fosd_count: fosd.count,
        beta_hat: fit.params.beta(),
        rho_hat: fit.params.rho(),
        loss: fit.loss,
        flags: flags.join(";"),
    })
}

/// Reports for all subjects, computed in parallel and sorted by subject id.
pub fn analyze_all(datasets: &[SubjectDataset], config: &EstimationConfig) -> Result<Vec<IndexReport>> {
    if datasets.is_empty() {
        return Err(Error::Validation("no subjects to analyze".into()));
    }
    let mut out = datasets
        .par_iter()
        .map(|ds| analyze_subject(ds, config))
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Jsonl,
}

impl OutputFormat {
    pub fn extension(self) -> &'static str {
        match self {
            OutputFormat::Csv => "csv",
            OutputFormat::Jsonl => "jsonl",
        }
    }
}

/// Writes serializable rows as CSV (with header) or one JSON object per line.
pub fn write_rows<T: Serialize>(rows: &[T], path: &Path, format: OutputFormat) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    match format {
        OutputFormat::Csv => {
            let mut w = csv::WriterBuilder::new()
                .terminator(csv::Terminator::Any(b'\n'))
                .from_writer(file);
            for r in rows {
                w.serialize(r)?;
            }
            w.flush().map_err(|e| Error::io(path, e))
        }
        OutputFormat::Jsonl => {
            let mut w = std::io::BufWriter::new(file);
            for r in rows {
                serde_json::to_writer(&mut w, r)?;
                w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
            }
            w.flush().map_err(|e| Error::io(path, e))
        }
    }
}

fn parse_error(path: &Path, row: usize, column: String, message: String) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        row,
        column,
        message,
    }
}

/// Reads rows written by [`write_rows`]: `.jsonl` files as JSON Lines,
/// anything else as CSV. When `header` is given the CSV header must match it.
pub fn read_rows<T: DeserializeOwned>(path: &Path, header: Option<&[&str]>) -> Result<Vec<T>> {
    if path.extension().is_some_and(|e| e == "jsonl") {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        return text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| parse_error(path, i + 1, "?".into(), e.to_string()))
            })
            .collect();
    }
    let mut rdr = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Validation(format!("{other:?}")),
    })?;
    let found: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if let Some(h) = header {
        if found != h {
            return Err(parse_error(
                path,
                1,
                "header".into(),
                format!("expected `{}`, found `{}`", h.join(","), found.join(",")),
            ));
        }
    }
    rdr.deserialize()
        .enumerate()
        .map(|(i, r)| {
            r.map_err(|e| {
                let column = match e.kind() {
                    csv::ErrorKind::Deserialize { err, .. } => err
                        .field()
                        .and_then(|f| found.get(f as usize).cloned())
                        .unwrap_or_else(|| "?".into()),
                    _ => "?".into(),
                };
                parse_error(path, i + 2, column, e.to_string())
            })
        })
        .collect()
}

pub fn read_index_reports(path: &Path) -> Result<Vec<IndexReport>> {
    let rows: Vec<IndexReport> = read_rows(path, Some(&INDEX_HEADER))?;
    if rows.is_empty() {
        return Err(Error::Validation(format!("{}: no index rows", path.display())));
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelRow {
    pub label: String,
    pub variable: String,
    pub p5: f64,
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
    pub p95: f64,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl PanelRow {
    fn new(label: &str, variable: &str, s: SummaryRow) -> Self {
        Self {
            label: label.into(),
            variable: variable.into(),
            p5: s.p5,
            p25: s.p25,
            p50: s.p50,
            p75: s.p75,
            p95: s.p95,
            mean: s.mean,
            std: s.std,
            n: s.n,
        }
    }
}

/// One panel (ccei, deut, beta, rho) per labelled report set, sorted by label.
/// NaN entries (undefined indices) are left out of their variable's row.
pub fn summary_panels(sets: &[(String, Vec<IndexReport>)]) -> Result<Vec<PanelRow>> {
    let mut sorted: Vec<&(String, Vec<IndexReport>)> = sets.iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));
    let mut rows = Vec::new();
    for (label, reports) in sorted {
        let columns: [(&str, fn(&IndexReport) -> f64); 4] = [
            ("ccei", |r| r.ccei),
            ("deut", |r| r.deut),
            ("beta", |r| r.beta_hat),
            ("rho", |r| r.rho_hat),
        ];
        for (name, get) in columns {
            let values: Vec<f64> = reports.iter().map(get).filter(|v| !v.is_nan()).collect();
            let summary = summarize(&values)
                .map_err(|e| Error::Validation(format!("panel `{label}`, {name}: {e}")))?;
            rows.push(PanelRow::new(label, name, summary));
        }
    }
    Ok(rows)
}

/// Fixed-width text rendering of summary panels.
pub fn render_panels(rows: &[PanelRow]) -> String {
    let mut out = String::new();
    let mut current = None;
    for r in rows {
        if current != Some(&r.label) {
            if current.is_some() {
                out.push('\n');
            }
            out.push_str(&format!("{}\n", r.label));
            out.push_str(&format!(
                "{:<8}{:>10}{:>10}{:>10}{:>10}{:>10}{:>10}{:>10}{:>6}\n",
                "", "p5", "p25", "p50", "p75", "p95", "mean", "std", "n"
            ));
            current = Some(&r.label);
        }
        out.push_str(&format!(
            "{:<8}{:>10.3}{:>10.3}{:>10.3}{:>10.3}{:>10.3}{:>10.3}{:>10.3}{:>6}\n",
            r.variable, r.p5, r.p25, r.p50, r.p75, r.p95, r.mean, r.std, r.n
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub s: usize,
    pub parameter: String,
    pub gamma: f64,
    pub se_gamma: f64,
    pub p_gamma: f64,
    pub alpha: f64,
    pub se_alpha: f64,
    pub p_alpha: f64,
    pub n: usize,
}

pub fn base_id(id: &str) -> &str {
    id.split(REPLICATE_SEPARATOR).next().unwrap_or(id)
}

/// Averages replicate estimates per base subject id and pairs them with
/// the truth. Every estimate must belong to a known subject and every
/// subject must have at least one estimate.
pub fn join_estimates(
    truth: &[(String, DaParams)],
    estimates: &[(String, f64, f64)],
) -> Result<Vec<(DaParams, f64, f64)>> {
    let mut acc: BTreeMap<&str, (f64, f64, usize)> = BTreeMap::new();
    let known: BTreeMap<&str, DaParams> = truth.iter().map(|(id, p)| (id.as_str(), *p)).collect();
    for (id, b, r) in estimates {
        let base = base_id(id);
        if !known.contains_key(base) {
            return Err(Error::Join(format!("estimate `{id}` has no matching subject")));
        }
        let e = acc.entry(base).or_insert((0.0, 0.0, 0));
        e.0 += b;
        e.1 += r;
        e.2 += 1;
    }
    truth
        .iter()
        .map(|(id, p)| {
            let (b, r, n) = acc
                .get(id.as_str())
                .ok_or_else(|| Error::Join(format!("subject `{id}` has no estimate")))?;
            Ok((*p, b / *n as f64, r / *n as f64))
        })
        .collect()
}

/// Regression of estimates on truth, once for β and once for ρ, per sample size.
pub fn learning_curve(
    truth: &[(String, DaParams)],
    estimates_by_s: &[(usize, Vec<(String, f64, f64)>)],
    cov: RobustCov,
) -> Result<Vec<CurveRow>> {
    let mut rows = Vec::new();
    let mut by_s: Vec<&(usize, Vec<(String, f64, f64)>)> = estimates_by_s.iter().collect();
    by_s.sort_by_key(|e| e.0);
    for (s, est) in by_s {
        let joined = join_estimates(truth, est)?;
        let pairs: [(&str, Vec<f64>, Vec<f64>); 2] = [
            (
                "beta",
                joined.iter().map(|j| j.0.beta()).collect(),
                joined.iter().map(|j| j.1).collect(),
            ),
            (
                "rho",
                joined.iter().map(|j| j.0.rho()).collect(),
                joined.iter().map(|j| j.2).collect(),
            ),
        ];
        for (name, x, y) in pairs {
            let r = regress_alignment(&x, &y, cov)?;
            rows.push(CurveRow {
                s: *s,
                parameter: name.into(),
                gamma: r.gamma,
                se_gamma: r.se_gamma,
                p_gamma: r.p_gamma,
                alpha: r.alpha,
                se_alpha: r.se_alpha,
                p_alpha: r.p_alpha,
                n: r.n,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterRow {
    pub label: String,
    pub subject_id: String,
    pub round: u32,
    /// `ln(p_A / p_B)`.
    pub log_price_ratio: f64,
    /// `ln(x_A / x_B)`; empty at corners.
    pub log_demand_ratio: Option<f64>,
    /// Budget share of asset A, `p_A x_A`.
    pub share_a: f64,
    pub fosd_violation: bool,
}

pub fn scatter_rows(label: &str, datasets: &[SubjectDataset]) -> Vec<ScatterRow> {
    let mut rows = Vec::new();
    for ds in datasets {
        let fosd = fosd_violations(ds);
        for (c, flagged) in ds.rounds().iter().zip(fosd.flags) {
            let (p, x) = (c.prices(), c.demand());
            rows.push(ScatterRow {
                label: label.into(),
                subject_id: ds.subject_id().into(),
                round: c.round(),
                log_price_ratio: (p.a() / p.b()).ln(),
                log_demand_ratio: (x.a() > 0.0 && x.b() > 0.0).then(|| (x.a() / x.b()).ln()),
                share_a: p.a() * x.a(),
                fosd_violation: flagged,
            });
        }
    }
    rows
}
