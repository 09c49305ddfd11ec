use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A canonical JSONL line could not be decoded.
    #[error("line {line}: {message}: {text:?}")]
    Jsonl {
        line: usize,
        message: String,
        text: String,
    },

    /// A Babeltrace text line did not match the grammar.
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    /// Wraps a per-line failure while reading a multi-line source.
    #[error("line {line}: {source}")]
    AtLine {
        line: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("invalid event: {0}")]
    InvalidEvent(String),

    #[error("id {id} out of range for table with {rows} rows")]
    OutOfRange { id: usize, rows: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite activation in {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("vocabulary hash mismatch for {which}: checkpoint {expected}, found {found}")]
    VocabMismatch {
        which: String,
        expected: String,
        found: String,
    },

    #[error("{0}")]
    Checkpoint(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Whether the failure is attributable to user-supplied configuration
    /// rather than a runtime fault.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Unsupported(_) | Error::VocabMismatch { .. }
        )
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
