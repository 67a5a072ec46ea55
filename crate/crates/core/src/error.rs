use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input at a known line (1-based).
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Input parsed but violates a structural invariant.
    #[error("validation error: {0}")]
    Validation(String),

    #[error("I/O error at line {line}: {source}")]
    IoAtLine {
        line: usize,
        #[source]
        source: io::Error,
    },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: msg.into(),
        }
    }

    /// True for failures of the underlying stream rather than of the data.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io(_) | Error::IoAtLine { .. })
    }
}
