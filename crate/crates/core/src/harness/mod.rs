//! Chat-model choice experiments: prompts, sessions, answer parsing and
//! transcripts.

pub mod backend;
pub mod parser;
pub mod prompts;
pub mod session;

use serde::{Deserialize, Serialize};

use crate::data::SubjectDataset;
use crate::error::{Error, Result};

pub use backend::{BackendConfig, BackendKind, ChatBackend, HttpBackend, MockBackend, MockMode};
pub use parser::{parse_allocations, Flag, ParseMode, ParsedRound};
pub use prompts::build_prompt;
pub use session::{
    run_decision_session, run_recommendation_session, Record, SessionStatus, Transcript,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    Assistant,
    User,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreatmentKind {
    Decision,
    Recommendation,
    PersonalizedRecommendation,
}

impl std::str::FromStr for TreatmentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "decision" => Ok(Self::Decision),
            "recommendation" => Ok(Self::Recommendation),
            "personalized" | "personalized_recommendation" => Ok(Self::PersonalizedRecommendation),
            other => Err(Error::Config(format!("unknown treatment `{other}`"))),
        }
    }
}

/// A prompt treatment. Personalized recommendations carry the sample
/// choices shown to the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Treatment {
    kind: TreatmentKind,
    sample: Option<SubjectDataset>,
}

impl Treatment {
    pub fn decision() -> Self {
        Self {
            kind: TreatmentKind::Decision,
            sample: None,
        }
    }

    pub fn recommendation() -> Self {
        Self {
            kind: TreatmentKind::Recommendation,
            sample: None,
        }
    }

    /// Shows the first `sample_size` rounds of `data`.
    pub fn personalized(data: &SubjectDataset, sample_size: usize) -> Result<Self> {
        if sample_size == 0 || sample_size > data.len() {
            return Err(Error::Validation(format!(
                "subject `{}` has {} rounds, cannot show {sample_size}",
                data.subject_id(),
                data.len()
            )));
        }
        Ok(Self {
            kind: TreatmentKind::PersonalizedRecommendation,
            sample: Some(data.prefix(sample_size)?),
        })
    }

    pub fn kind(&self) -> TreatmentKind {
        self.kind
    }

    pub fn sample(&self) -> Option<&SubjectDataset> {
        self.sample.as_ref()
    }

    pub fn sample_size(&self) -> Option<usize> {
        self.sample.as_ref().map(SubjectDataset::len)
    }
}
