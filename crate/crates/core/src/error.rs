use std::path::PathBuf;

/// Errors produced across the workbench.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A numeric input fell outside its mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// A value violated a documented data invariant.
    #[error("validation error: {0}")]
    Validation(String),

    /// A malformed record in an input file.
    #[error("{}: row {row}, column `{column}`: {message}", path.display())]
    Parse {
        path: PathBuf,
        row: usize,
        column: String,
        message: String,
    },

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("singular design: {0}")]
    Singular(String),

    #[error("template error: {0}")]
    Template(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("backend error: {0}")]
    Backend(String),

    #[error("join error: {0}")]
    Join(String),

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad input data rather than the environment.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Domain(_)
                | Error::Validation(_)
                | Error::Parse { .. }
                | Error::Degenerate(_)
                | Error::Singular(_)
                | Error::Join(_)
                | Error::Csv(_)
                | Error::Template(_)
                | Error::Config(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
