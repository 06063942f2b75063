use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed record {id}: {reason}")]
    MalformedRecord { id: String, reason: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("render failed for {id} ({task}): {reason}")]
    Render { id: String, task: String, reason: String },

    #[error("token id {id} out of vocabulary (size {vocab})")]
    OutOfVocab { id: u32, vocab: usize },

    #[error("sequence length {len} exceeds max positions {max}")]
    Overlength { len: usize, max: usize },

    #[error("non-finite loss at step {step} on example {example_id} ({task}): {dump}")]
    NonFiniteLoss {
        step: usize,
        example_id: String,
        task: String,
        dump: String,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// Short machine-readable category, used for CLI exit reporting.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::MalformedRecord { .. } | Error::Serde(_) => "data",
            Error::InvalidInput(_) | Error::OutOfVocab { .. } | Error::Overlength { .. } => "input",
            Error::InvalidConfig(_) => "config",
            Error::Render { .. } => "render",
            Error::NonFiniteLoss { .. } => "training",
            Error::Checkpoint(_) => "checkpoint",
        }
    }
}
