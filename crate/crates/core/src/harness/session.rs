//! Session drivers and JSON Lines transcripts.
//!
//! Decision sessions ask one round per request and carry the earlier
//! answers forward as assistant turns. Recommendation sessions send the
//! whole return table in a single request.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use super::backend::ChatBackend;
use super::parser::{parse_allocations, Flag, ParseMode, ParsedRound};
use super::prompts::{self, decision_answer, DISPLAY_DECIMALS, SESSION_ROUNDS};
use super::{Message, Role, Treatment, TreatmentKind};
use crate::data::{Allocation, ChoiceRound, Provenance, ReturnPair, SubjectDataset, DEFAULT_SLACK};
use crate::error::{Error, Result};
use crate::simulation::BudgetSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Complete,
    BackendError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Record {
    SessionStart {
        session_id: String,
        treatment: TreatmentKind,
        sample_size: Option<usize>,
        /// Returns exactly as shown to the model.
        returns: Vec<[f64; 2]>,
        backend: String,
        timestamp: String,
    },
    Request {
        request: usize,
        round: Option<u32>,
        attempt: u32,
        messages: Vec<Message>,
        timestamp: String,
    },
    Response {
        request: usize,
        text: String,
        latency_ms: u64,
        timestamp: String,
    },
    BackendError {
        request: usize,
        message: String,
        timestamp: String,
    },
    Parsed(ParsedRound),
    SessionEnd {
        status: SessionStatus,
        parsed_rounds: usize,
        flagged_rounds: usize,
        timestamp: String,
    },
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

/// Log of one session. When opened on a path every record is appended to
/// the file as soon as it is produced, so a crash leaves a partial log.
pub struct Transcript {
    records: Vec<Record>,
    sink: Option<(PathBuf, BufWriter<File>)>,
}

impl std::fmt::Debug for Transcript {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Transcript")
            .field("records", &self.records.len())
            .field("path", &self.sink.as_ref().map(|s| &s.0))
            .finish()
    }
}

impl Transcript {
    pub fn in_memory() -> Self {
        Self {
            records: Vec::new(),
            sink: None,
        }
    }

    /// Transcript persisted to `path`, truncating any earlier content.
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            records: Vec::new(),
            sink: Some((path, BufWriter::new(file))),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut records = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec = serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                row: i + 1,
                column: "record".into(),
                message: e.to_string(),
            })?;
            records.push(rec);
        }
        Ok(Self {
            records,
            sink: None,
        })
    }

    fn push(&mut self, record: Record) -> Result<()> {
        if let Some((path, w)) = &mut self.sink {
            serde_json::to_writer(&mut *w, &record)?;
            w.write_all(b"\n")
                .and_then(|_| w.flush())
                .map_err(|e| Error::io(path.as_path(), e))?;
        }
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn session_id(&self) -> Option<&str> {
        self.records.iter().find_map(|r| match r {
            Record::SessionStart { session_id, .. } => Some(session_id.as_str()),
            _ => None,
        })
    }

    pub fn treatment(&self) -> Option<TreatmentKind> {
        self.records.iter().find_map(|r| match r {
            Record::SessionStart { treatment, .. } => Some(*treatment),
            _ => None,
        })
    }

    pub fn returns(&self) -> Vec<ReturnPair> {
        self.records
            .iter()
            .find_map(|r| match r {
                Record::SessionStart { returns, .. } => Some(
                    returns
                        .iter()
                        .filter_map(|[a, b]| ReturnPair::new(*a, *b).ok())
                        .collect(),
                ),
                _ => None,
            })
            .unwrap_or_default()
    }

    /// Message lists in the order they were sent.
    pub fn requests(&self) -> Vec<&[Message]> {
        self.records
            .iter()
            .filter_map(|r| match r {
                Record::Request { messages, .. } => Some(messages.as_slice()),
                _ => None,
            })
            .collect()
    }

    pub fn responses(&self) -> Vec<&str> {
        self.records
            .iter()
            .filter_map(|r| match r {
                Record::Response { text, .. } => Some(text.as_str()),
                _ => None,
            })
            .collect()
    }

    /// Final outcome per round.
    pub fn parsed(&self) -> Vec<&ParsedRound> {
        self.records
            .iter()
            .filter_map(|r| match r {
                Record::Parsed(p) => Some(p),
                _ => None,
            })
            .collect()
    }

    pub fn status(&self) -> Option<SessionStatus> {
        self.records.iter().rev().find_map(|r| match r {
            Record::SessionEnd { status, .. } => Some(*status),
            _ => None,
        })
    }

    /// The session ran to the end without a backend failure.
    pub fn is_complete(&self) -> bool {
        matches!(self.records.last(), Some(Record::SessionEnd { status: SessionStatus::Complete, .. }))
    }

    pub fn anomaly_count(&self) -> usize {
        self.parsed().iter().filter(|p| p.is_anomalous()).count()
    }

    /// Parsed rounds as a dataset named after the session, or `None` when no
    /// round produced a usable allocation.
    pub fn to_dataset(&self) -> Result<Option<SubjectDataset>> {
        let returns = self.returns();
        let provenance = match self.treatment() {
            Some(TreatmentKind::Decision) => Provenance::LlmDecision,
            Some(TreatmentKind::Recommendation) => Provenance::LlmRecommendation,
            Some(TreatmentKind::PersonalizedRecommendation) => Provenance::LlmPersonalized,
            None => return Err(Error::Validation("transcript has no session_start record".into())),
        };
        let mut rounds = Vec::new();
        for p in self.parsed() {
            let Some((a, b)) = p.allocation() else { continue };
            let r = returns.get(p.round as usize - 1).ok_or_else(|| {
                Error::Validation(format!("parsed round {} has no returns", p.round))
            })?;
            rounds.push(ChoiceRound::from_tokens(p.round, *r, Allocation::new(a, b)?, DEFAULT_SLACK)?);
        }
        if rounds.is_empty() {
            return Ok(None);
        }
        let id = self.session_id().unwrap_or_default().to_string();
        SubjectDataset::new(id, provenance, rounds).map(Some)
    }

    fn finish(&mut self, status: SessionStatus) -> Result<()> {
        let parsed = self.parsed();
        let parsed_rounds = parsed.iter().filter(|p| p.allocation().is_some()).count();
        let flagged_rounds = parsed.iter().filter(|p| p.is_anomalous()).count();
        self.push(Record::SessionEnd {
            status,
            parsed_rounds,
            flagged_rounds,
            timestamp: now(),
        })
    }
}

struct Exchange<'a> {
    backend: &'a dyn ChatBackend,
    transcript: Transcript,
    requests: usize,
}

impl Exchange<'_> {
    /// Sends one request and logs both sides. `Err` carries the backend
    /// message after it has been logged.
    fn ask(&mut self, round: Option<u32>, attempt: u32, messages: Vec<Message>) -> Result<std::result::Result<String, String>> {
        let request = self.requests;
        self.requests += 1;
        self.transcript.push(Record::Request {
            request,
            round,
            attempt,
            messages: messages.clone(),
            timestamp: now(),
        })?;
        let started = Instant::now();
        match self.backend.send(&messages) {
            Ok(text) => {
                self.transcript.push(Record::Response {
                    request,
                    text: text.clone(),
                    latency_ms: started.elapsed().as_millis() as u64,
                    timestamp: now(),
                })?;
                Ok(Ok(text))
            }
            Err(e) => {
                self.transcript.push(Record::BackendError {
                    request,
                    message: e.to_string(),
                    timestamp: now(),
                })?;
                Ok(Err(e.to_string()))
            }
        }
    }
}

fn displayed(schedule: &[ReturnPair]) -> Result<Vec<ReturnPair>> {
    if schedule.len() != SESSION_ROUNDS {
        return Err(Error::Validation(format!(
            "sessions use {SESSION_ROUNDS} rounds, schedule has {}",
            schedule.len()
        )));
    }
    Ok(BudgetSchedule {
        seed: 0,
        rounds: schedule.to_vec(),
    }
    .rounded(DISPLAY_DECIMALS)?
    .rounds)
}

fn start(
    backend: &dyn ChatBackend,
    session_id: &str,
    treatment: &Treatment,
    returns: &[ReturnPair],
    out: Option<&Path>,
) -> Result<Transcript> {
    let mut t = match out {
        Some(p) => Transcript::create(p)?,
        None => Transcript::in_memory(),
    };
    t.push(Record::SessionStart {
        session_id: session_id.to_string(),
        treatment: treatment.kind(),
        sample_size: treatment.sample_size(),
        returns: returns.iter().map(|r| [r.a(), r.b()]).collect(),
        backend: backend.describe(),
        timestamp: now(),
    })?;
    Ok(t)
}

/// Cumulative decision session over a 25-round schedule. Returns are
/// rounded to the displayed precision and the rounded values define the
/// dataset. A backend failure ends the session early with
/// [`SessionStatus::BackendError`]; the partial transcript is returned.
pub fn run_decision_session(
    backend: &dyn ChatBackend,
    session_id: &str,
    schedule: &[ReturnPair],
    out: Option<&Path>,
) -> Result<Transcript> {
    let treatment = Treatment::decision();
    let returns = displayed(schedule)?;
    let preamble = prompts::preamble(&treatment)?;
    let mut ex = Exchange {
        backend,
        transcript: start(backend, session_id, &treatment, &returns, out)?,
        requests: 0,
    };
    let mut history: Vec<Message> = Vec::new();

    for (k, r) in returns.iter().enumerate() {
        let round = k as u32 + 1;
        let user = prompts::decision_user(*r)?;
        let base: Vec<Message> = preamble.iter().chain(&history).cloned().collect();

        let mut attempt = 0;
        let mut messages = base.clone();
        messages.push(Message::new(Role::User, user.clone()));
        let (text, parsed) = loop {
            let text = match ex.ask(Some(round), attempt, messages)? {
                Ok(text) => text,
                Err(_) => {
                    let mut failed = parse_allocations("", ParseMode::Decision { round }).remove(0);
                    failed.flags = vec![Flag::BackendFailure];
                    if attempt > 0 {
                        failed.flags.push(Flag::Retried);
                    }
                    ex.transcript.push(Record::Parsed(failed))?;
                    ex.transcript.finish(SessionStatus::BackendError)?;
                    return Ok(ex.transcript);
                }
            };
            let mut parsed = parse_allocations(&text, ParseMode::Decision { round }).remove(0);
            if parsed.allocation().is_some() || attempt > 0 {
                if attempt > 0 {
                    parsed.flags.push(Flag::Retried);
                }
                break (text, parsed);
            }
            attempt += 1;
            messages = base.clone();
            messages.push(Message::new(
                Role::User,
                format!("{user}\n\n{}", prompts::DECISION_REMINDER),
            ));
        };
        let answer = match parsed.allocation() {
            Some((a, b)) => decision_answer(a, b),
            None => text,
        };
        ex.transcript.push(Record::Parsed(parsed))?;
        history.push(Message::new(Role::User, user));
        history.push(Message::new(Role::Assistant, answer));
    }
    ex.transcript.finish(SessionStatus::Complete)?;
    Ok(ex.transcript)
}

/// Single-request recommendation session (with or without sample data).
pub fn run_recommendation_session(
    backend: &dyn ChatBackend,
    session_id: &str,
    treatment: &Treatment,
    schedule: &[ReturnPair],
    out: Option<&Path>,
) -> Result<Transcript> {
    if treatment.kind() == TreatmentKind::Decision {
        return Err(Error::Validation(
            "recommendation sessions need a recommendation treatment".into(),
        ));
    }
    let returns = displayed(schedule)?;
    let messages = prompts::build_prompt(treatment, &returns)?;
    let mut ex = Exchange {
        backend,
        transcript: start(backend, session_id, treatment, &returns, out)?,
        requests: 0,
    };
    let rounds = returns.len() as u32;
    match ex.ask(None, 0, messages)? {
        Ok(text) => {
            for p in parse_allocations(&text, ParseMode::Recommendation { rounds }) {
                ex.transcript.push(Record::Parsed(p))?;
            }
            ex.transcript.finish(SessionStatus::Complete)?;
        }
        Err(_) => {
            for round in 1..=rounds {
                let mut p = parse_allocations("", ParseMode::Decision { round }).remove(0);
                p.flags = vec![Flag::BackendFailure];
                ex.transcript.push(Record::Parsed(p))?;
            }
            ex.transcript.finish(SessionStatus::BackendError)?;
        }
    }
    Ok(ex.transcript)
}
