use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the alignment library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("{file}:{line}: {message}")]
    Format {
        file: String,
        line: usize,
        message: String,
    },

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("row count mismatch: header declares {expected} rows, found {actual}")]
    RowCountMismatch { expected: usize, actual: usize },

    #[error("undefined cosine: zero vector")]
    ZeroVector,

    #[error("ambiguous signature table: `{raw}` maps to both `{first}` and `{second}`")]
    AmbiguousSignature {
        raw: String,
        first: String,
        second: String,
    },

    #[error("gradient descent diverged, last loss {last_loss}")]
    Diverged { last_loss: f64 },

    #[error("non-finite value during training: {0}")]
    NonFinite(String),

    #[error("empty ground truth")]
    EmptyTruth,

    #[error("{0}")]
    InvalidInput(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(file: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Format {
            file: file.into(),
            line,
            message: message.into(),
        }
    }

    /// True for errors caused by malformed input or usage rather than by a
    /// numerical failure. The CLI maps these to exit code 2.
    pub fn is_input_error(&self) -> bool {
        !matches!(
            self,
            Error::Diverged { .. } | Error::NonFinite(_) | Error::ZeroVector
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
