use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: malformed record: {message}")]
    MalformedLine { line: usize, message: String },

    #[error("document {doc_id}: {message}")]
    InvalidDocument { doc_id: String, message: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("document {0} has no reference summary")]
    MissingReference(String),

    #[error("document {0} has no labels")]
    MissingLabels(String),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("sentence {0} has a zero-norm representation")]
    ZeroNormRow(usize),

    #[error("principal minor is singular (ridge escalated to {ridge:e})")]
    SingularMinor { ridge: f64 },

    #[error("internal numeric error: {0}")]
    Numeric(String),

    #[error("non-finite loss on document {0}")]
    NonFiniteLoss(String),

    #[error("backward pass called without a retained forward pass")]
    NoForwardPass,

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("window size {k} is not smaller than document length {n}")]
    DocumentTooShort { n: usize, k: usize },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the error signals a numeric failure rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::SingularMinor { .. }
                | Error::Numeric(_)
                | Error::NonFiniteLoss(_)
                | Error::ZeroNormRow(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
