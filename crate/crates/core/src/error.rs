use std::path::PathBuf;

use crate::rmab::dsl::ParseError;

/// Errors produced anywhere in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid task: {0}")]
    InvalidTask(String),

    /// The requested divergence is undefined at this soft label.
    #[error("q = {q} is outside the domain of the {divergence} ambiguity set; use chi2_relaxed for boundary labels")]
    Domain { q: f64, divergence: &'static str },

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("non-finite {what} at epoch {epoch}, batch {batch}")]
    NonFinite {
        what: &'static str,
        epoch: usize,
        batch: usize,
    },

    #[error("architecture mismatch: expected {expected}, found {found}")]
    ArchitectureMismatch { expected: String, found: String },

    #[error("malformed checkpoint {path}: {message} (line {line}, column {column})")]
    Checkpoint {
        path: PathBuf,
        message: String,
        line: usize,
        column: usize,
    },

    #[error("reward expression: {0}")]
    Parse(#[from] ParseError),

    #[error("instance is not indexable: {0}")]
    NonIndexable(String),

    #[error("instance too large for exhaustive planning: {0}")]
    SizeLimit(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
