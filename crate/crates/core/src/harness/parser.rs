//! Extraction of point allocations from free-text answers.
//!
//! The parser never fails: every problem becomes a [`Flag`] on the round.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::data::DEFAULT_SLACK;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flag {
    /// No allocation could be located.
    Unparseable,
    /// Found only by the tolerant patterns.
    LooseFormat,
    /// Points do not sum to within the slack band around 100; round rejected.
    SumOutOfBand,
    /// Points sum to something other than 100 but within the band.
    Rescaled,
    MissingRound,
    DuplicateRound,
    /// The round was asked a second time after an unusable answer.
    Retried,
    /// The backend failed before an answer arrived.
    BackendFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedRound {
    pub round: u32,
    pub t_a: Option<f64>,
    pub t_b: Option<f64>,
    pub flags: Vec<Flag>,
}

impl ParsedRound {
    fn failed(round: u32, flag: Flag) -> Self {
        Self {
            round,
            t_a: None,
            t_b: None,
            flags: vec![flag],
        }
    }

    pub fn allocation(&self) -> Option<(f64, f64)> {
        self.t_a.zip(self.t_b)
    }

    pub fn has(&self, flag: Flag) -> bool {
        self.flags.contains(&flag)
    }

    /// True when the round carries any flag other than an accepted rescale.
    pub fn is_anomalous(&self) -> bool {
        self.flags.iter().any(|f| *f != Flag::Rescaled)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseMode {
    /// One answer for the given round.
    Decision { round: u32 },
    /// One answer covering rounds `1..=rounds`.
    Recommendation { rounds: u32 },
}

const NUM: &str = r"(\d+(?:\.\d+)?|\.\d+)";
const PREP: &str = r"(?i:to|in|into|on|for)";

static STRICT: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(&format!(
        r"(?i:invest(?:ing|ed)?)\s+{NUM}\s*(?i:points?)\s+{PREP}\s+(?i:the\s+)?(?i:asset)\s+A\b[^0-9]*?{NUM}\s*(?i:points?)\s+{PREP}\s+(?i:the\s+)?(?i:asset)\s+B\b"
    ))
    .unwrap()
});

fn loose_patterns(label: char) -> Vec<Regex> {
    [
        format!(r"{NUM}\s*(?i:points?|pts\.?|%)?\s*{PREP}\s+(?i:the\s+)?(?i:asset\s+)?{label}\b"),
        format!(r"{NUM}\s*(?i:points?|pts\.?|%)?\s*(?i:of\s+)?(?i:asset)\s+{label}\b"),
        format!(r"(?i:asset)\s+{label}\s*(?::|=|-|(?i:gets|receives))?\s*{NUM}"),
        format!(r"\b{label}\s*[:=]\s*{NUM}"),
    ]
    .iter()
    .map(|p| Regex::new(p).unwrap())
    .collect()
}

static LOOSE_A: LazyLock<Vec<Regex>> = LazyLock::new(|| loose_patterns('A'));
static LOOSE_B: LazyLock<Vec<Regex>> = LazyLock::new(|| loose_patterns('B'));

static ROUND_MARKER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\bround\s+(\d+)\b").unwrap());

static TABLE_ROW: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(&format!(r"(?m)^\s*\|?\s*(\d+)\s*\|\s*{NUM}\s*\|\s*{NUM}\s*\|?\s*$")).unwrap()
});

fn number(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Earliest match among `patterns`, as (position, value).
fn earliest(text: &str, patterns: &[Regex]) -> Option<(usize, f64)> {
    patterns
        .iter()
        .filter_map(|re| {
            re.captures(text).and_then(|c| {
                let m = c.get(1)?;
                Some((c.get(0)?.start(), number(m.as_str())?))
            })
        })
        .min_by_key(|(pos, _)| *pos)
}

fn checked(round: u32, a: f64, b: f64, mut flags: Vec<Flag>) -> ParsedRound {
    let sum = a + b;
    if (sum - 100.0).abs() > DEFAULT_SLACK {
        flags.push(Flag::SumOutOfBand);
        return ParsedRound {
            round,
            t_a: None,
            t_b: None,
            flags,
        };
    }
    if sum != 100.0 {
        flags.push(Flag::Rescaled);
    }
    ParsedRound {
        round,
        t_a: Some(a),
        t_b: Some(b),
        flags,
    }
}

fn parse_single(round: u32, text: &str) -> ParsedRound {
    if let Some(c) = STRICT.captures(text) {
        if let (Some(a), Some(b)) = (number(&c[1]), number(&c[2])) {
            return checked(round, a, b, Vec::new());
        }
    }
    match (earliest(text, &LOOSE_A), earliest(text, &LOOSE_B)) {
        (Some((_, a)), Some((_, b))) => checked(round, a, b, vec![Flag::LooseFormat]),
        _ => ParsedRound::failed(round, Flag::Unparseable),
    }
}

fn parse_recommendation(rounds: u32, text: &str) -> Vec<ParsedRound> {
    let markers: Vec<(u32, usize, usize)> = ROUND_MARKER
        .captures_iter(text)
        .filter_map(|c| {
            let m = c.get(0)?;
            Some((c[1].parse().ok()?, m.start(), m.end()))
        })
        .collect();
    let mut found: Vec<Option<ParsedRound>> = vec![None; rounds as usize];
    let mut duplicates = vec![false; rounds as usize];

    for (i, &(round, _, body_start)) in markers.iter().enumerate() {
        if round == 0 || round > rounds {
            continue;
        }
        let body_end = markers.get(i + 1).map_or(text.len(), |m| m.1);
        let slot = (round - 1) as usize;
        if found[slot].is_some() {
            duplicates[slot] = true;
            continue;
        }
        found[slot] = Some(parse_single(round, &text[body_start..body_end]));
    }
    if markers.is_empty() {
        for c in TABLE_ROW.captures_iter(text) {
            let (Some(round), Some(a), Some(b)) = (c[1].parse::<u32>().ok(), number(&c[2]), number(&c[3]))
            else {
                continue;
            };
            if round == 0 || round > rounds {
                continue;
            }
            let slot = (round - 1) as usize;
            if found[slot].is_some() {
                duplicates[slot] = true;
            } else {
                found[slot] = Some(checked(round, a, b, vec![Flag::LooseFormat]));
            }
        }
    }
    found
        .into_iter()
        .enumerate()
        .map(|(slot, r)| {
            let mut r = r.unwrap_or_else(|| ParsedRound::failed(slot as u32 + 1, Flag::MissingRound));
            if duplicates[slot] {
                r.flags.push(Flag::DuplicateRound);
            }
            r
        })
        .collect()
}

/// Allocations found in `text`. Decision mode yields exactly one entry;
/// recommendation mode yields one entry per round `1..=rounds`, in order.
pub fn parse_allocations(text: &str, mode: ParseMode) -> Vec<ParsedRound> {
    match mode {
        ParseMode::Decision { round } => vec![parse_single(round, text)],
        ParseMode::Recommendation { rounds } => parse_recommendation(rounds, text),
    }
}
