use std::path::PathBuf;

use chrono::NaiveDate;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: line {line}: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("missing day {0} inside the count window")]
    MissingDay(NaiveDate),

    #[error("non-monotone at day {day} ({date}): cumulative fell from {from} to {to}")]
    NonMonotone {
        day: usize,
        date: NaiveDate,
        from: u64,
        to: u64,
    },

    #[error("document and count windows overlap by {days} days, need at least {needed}")]
    InsufficientOverlap { days: i64, needed: i64 },

    #[error("vocabulary is empty after applying min_count = {min_count}; try a lower min_count")]
    EmptyVocabulary { min_count: u64 },

    #[error("series too short: need at least {needed} values, got {got}")]
    TooShort { needed: usize, got: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("singular regression: {0}")]
    Singular(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("bad {kind} file: {message}")]
    Format { kind: &'static str, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the error stems from the input data rather than from the caller
    /// or the environment.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Malformed { .. }
                | Error::MissingDay(_)
                | Error::NonMonotone { .. }
                | Error::InsufficientOverlap { .. }
                | Error::EmptyVocabulary { .. }
                | Error::TooShort { .. }
                | Error::Degenerate(_)
                | Error::Singular(_)
                | Error::Empty(_)
        )
    }
}
