use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot parse quantity from {0:?}")]
    ParseFailure(String),

    #[error("unit {unit} is incompatible with head {head} (expects {expected})")]
    IncompatibleUnit {
        unit: String,
        head: String,
        expected: String,
    },

    #[error("malformed document at line {line}: {reason}")]
    MalformedDocument { line: usize, reason: String },

    #[error("record ids differ between extracted and gold sets: {0}")]
    MismatchedIds(String),

    #[error("sample description is empty")]
    EmptySample,

    #[error("head {head} is degenerate: {reason}")]
    DegenerateHead { head: String, reason: String },

    #[error("non-finite loss at batch {batch} of epoch {epoch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("targets have zero variance")]
    ZeroVariance,

    #[error("label leakage: {0} target values survive in prompts")]
    Leakage(usize),

    #[error("invalid registry: {0}")]
    Registry(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("{path}:{line}: {reason}")]
    Format {
        path: String,
        line: usize,
        reason: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<String>, line: usize, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            line,
            reason: reason.into(),
        }
    }
}
