use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the engine, the environments and the training harness.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid construction parameters or mismatched shapes.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    /// Non-finite values encountered while training.
    #[error("training error: {0}")]
    Training(String),

    /// An operation was asked to summarize an empty collection.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Caller-supplied data violates an operation's preconditions.
    #[error("invalid input: {0}")]
    Input(String),

    /// A query about environment state that cannot be answered (e.g. a dead agent).
    #[error("invalid query: {0}")]
    Query(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}
