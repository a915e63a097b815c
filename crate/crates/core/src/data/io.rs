//! Choice CSV files.
//!
//! Two header layouts are accepted and auto-detected:
//! `subject_id,round,r_a,r_b,t_a,t_b` (returns and tokens) and
//! `subject_id,round,p_a,p_b,x_a,x_b` (prices and demands).

use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use indexmap::IndexMap;

use super::{
    Allocation, ChoiceRound, Demand, Observation, PricePair, Provenance, ReturnPair,
    SubjectDataset,
};
use crate::error::{Error, Result};

pub const TOKEN_HEADER: [&str; 6] = ["subject_id", "round", "r_a", "r_b", "t_a", "t_b"];
pub const PRICE_HEADER: [&str; 6] = ["subject_id", "round", "p_a", "p_b", "x_a", "x_b"];

/// Column layout of a choice file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ChoiceFormat {
    #[default]
    Tokens,
    Prices,
}

impl ChoiceFormat {
    fn header(self) -> [&'static str; 6] {
        match self {
            ChoiceFormat::Tokens => TOKEN_HEADER,
            ChoiceFormat::Prices => PRICE_HEADER,
        }
    }

    fn detect(path: &Path, header: &csv::StringRecord) -> Result<Self> {
        let cols: Vec<&str> = header.iter().map(str::trim).collect();
        if cols == TOKEN_HEADER {
            Ok(ChoiceFormat::Tokens)
        } else if cols == PRICE_HEADER {
            Ok(ChoiceFormat::Prices)
        } else {
            Err(Error::Parse {
                path: path.to_path_buf(),
                row: 1,
                column: "header".into(),
                message: format!(
                    "expected `{}` or `{}`, found `{}`",
                    TOKEN_HEADER.join(","),
                    PRICE_HEADER.join(","),
                    cols.join(",")
                ),
            })
        }
    }
}

struct RowReader<'a> {
    path: &'a Path,
    header: [&'static str; 6],
    record: &'a csv::StringRecord,
    line: usize,
}

impl RowReader<'_> {
    fn err(&self, col: usize, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            row: self.line,
            column: self.header[col].to_string(),
            message: message.into(),
        }
    }

    fn text(&self, col: usize) -> Result<&str> {
        let s = self
            .record
            .get(col)
            .ok_or_else(|| self.err(col, "missing field"))?
            .trim();
        Ok(s)
    }

    fn float(&self, col: usize) -> Result<f64> {
        let s = self.text(col)?;
        let v: f64 = s
            .parse()
            .map_err(|_| self.err(col, format!("`{s}` is not a decimal number")))?;
        if !v.is_finite() {
            return Err(self.err(col, format!("`{s}` is not finite")));
        }
        Ok(v)
    }

    fn opt_float(&self, col: usize) -> Result<Option<f64>> {
        if self.text(col)?.is_empty() {
            Ok(None)
        } else {
            self.float(col).map(Some)
        }
    }

    fn round(&self) -> Result<u32> {
        let s = self.text(1)?;
        match s.parse::<u32>() {
            Ok(r) if r >= 1 => Ok(r),
            _ => Err(self.err(1, format!("`{s}` is not a 1-based round index"))),
        }
    }

    fn subject(&self) -> Result<&str> {
        let s = self.text(0)?;
        if s.is_empty() {
            return Err(self.err(0, "empty subject id"));
        }
        Ok(s)
    }

    /// Wraps a domain/validation failure with this row's location.
    fn locate(&self, col: usize, e: Error) -> Error {
        match e {
            Error::Parse { .. } => e,
            other => self.err(col, other.to_string()),
        }
    }
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(false)
        .from_reader(r)
}

/// Reads every subject in a choice file, validating all invariants.
///
/// Subjects appear in order of first occurrence. Each row is checked against
/// the slack band; a failing row is reported with its line number and column.
pub fn read_datasets(
    path: impl AsRef<Path>,
    provenance: Provenance,
    slack: f64,
) -> Result<Vec<SubjectDataset>> {
    let path = path.as_ref();
    read_datasets_from(open(path)?, path, provenance, slack)
}

pub(crate) fn read_datasets_from<R: Read>(
    input: R,
    path: &Path,
    provenance: Provenance,
    slack: f64,
) -> Result<Vec<SubjectDataset>> {
    let mut rdr = reader(input);
    let format = ChoiceFormat::detect(path, rdr.headers()?)?;
    let mut groups: IndexMap<String, Vec<ChoiceRound>> = IndexMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let record = rec?;
        let row = RowReader {
            path,
            header: format.header(),
            record: &record,
            line: record.position().map(|p| p.line() as usize).unwrap_or(i + 2),
        };
        let subject = row.subject()?;
        let round = row.round()?;
        let (a, b, c, d) = (row.float(2)?, row.float(3)?, row.float(4)?, row.float(5)?);
        let parsed = match format {
            ChoiceFormat::Tokens => {
                let r = ReturnPair::new(a, b).map_err(|e| row.locate(2, e))?;
                let t = Allocation::new(c, d).map_err(|e| row.locate(4, e))?;
                ChoiceRound::from_tokens(round, r, t, slack).map_err(|e| row.locate(5, e))?
            }
            ChoiceFormat::Prices => {
                let p = PricePair::new(a, b).map_err(|e| row.locate(2, e))?;
                let x = Demand::new(c, d).map_err(|e| row.locate(4, e))?;
                ChoiceRound::from_prices(round, p, x, slack).map_err(|e| row.locate(5, e))?
            }
        };
        groups.entry(subject.to_string()).or_default().push(parsed);
    }
    if groups.is_empty() {
        return Err(Error::Validation(format!("{}: no choice rows", path.display())));
    }
    groups
        .into_iter()
        .map(|(id, rounds)| SubjectDataset::new(id, provenance, rounds))
        .collect()
}

/// Writes datasets in the requested layout. Rounds observed in the same
/// layout are written exactly as read; others are converted from the
/// normalized representation.
pub fn write_datasets(
    datasets: &[SubjectDataset],
    path: impl AsRef<Path>,
    format: ChoiceFormat,
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_datasets_to(datasets, file, format)
}

pub(crate) fn write_datasets_to<W: Write>(
    datasets: &[SubjectDataset],
    out: W,
    format: ChoiceFormat,
) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(format.header())?;
    for ds in datasets {
        for c in ds.rounds() {
            let (a, b, x, y) = match (format, c.observed()) {
                (ChoiceFormat::Tokens, Observation::Tokens { returns, allocation }) => {
                    (returns.a(), returns.b(), allocation.a(), allocation.b())
                }
                (ChoiceFormat::Tokens, Observation::Prices { .. }) => {
                    let r = c.returns();
                    let t = c.tokens();
                    (r.a(), r.b(), t.a(), t.b())
                }
                (ChoiceFormat::Prices, Observation::Prices { prices, demand }) => {
                    (prices.a(), prices.b(), demand.a(), demand.b())
                }
                (ChoiceFormat::Prices, Observation::Tokens { .. }) => {
                    let (p, x) = (c.prices(), c.demand());
                    (p.a(), p.b(), x.a(), x.b())
                }
            };
            w.write_record([
                ds.subject_id().to_string(),
                c.round().to_string(),
                a.to_string(),
                b.to_string(),
                x.to_string(),
                y.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(PathBuf::from("<output>"), e))?;
    Ok(())
}

/// Writes a return schedule in the token layout with empty allocation columns.
pub fn write_schedule(schedule: &[ReturnPair], label: &str, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(file);
    w.write_record(TOKEN_HEADER)?;
    for (k, r) in schedule.iter().enumerate() {
        w.write_record([
            label.to_string(),
            (k + 1).to_string(),
            r.a().to_string(),
            r.b().to_string(),
            String::new(),
            String::new(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads the returns of a token-layout file, ignoring allocation columns.
/// Only the first subject's rows are used.
pub fn read_schedule(path: impl AsRef<Path>) -> Result<Vec<ReturnPair>> {
    let path = path.as_ref();
    let mut rdr = reader(open(path)?);
    let header = rdr.headers()?.clone();
    if ChoiceFormat::detect(path, &header)? != ChoiceFormat::Tokens {
        return Err(Error::Validation(format!(
            "{}: schedules must use the `{}` layout",
            path.display(),
            TOKEN_HEADER.join(",")
        )));
    }
    let mut out = Vec::new();
    let mut first: Option<String> = None;
    let mut last_round = 0;
    for (i, rec) in rdr.records().enumerate() {
        let record = rec?;
        let row = RowReader {
            path,
            header: TOKEN_HEADER,
            record: &record,
            line: record.position().map(|p| p.line() as usize).unwrap_or(i + 2),
        };
        let subject = row.subject()?.to_string();
        match &first {
            None => first = Some(subject),
            Some(f) if *f != subject => continue,
            Some(_) => {}
        }
        let round = row.round()?;
        if round <= last_round {
            return Err(row.err(1, "round indices must strictly increase"));
        }
        last_round = round;
        let _ = (row.opt_float(4)?, row.opt_float(5)?);
        out.push(ReturnPair::new(row.float(2)?, row.float(3)?).map_err(|e| row.locate(2, e))?);
    }
    if out.is_empty() {
        return Err(Error::Validation(format!("{}: empty schedule", path.display())));
    }
    Ok(out)
}
