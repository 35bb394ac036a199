use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A tensor shape did not satisfy an operator's contract.
    #[error("dimension error in {op}: {axis} expected {expected}, got {actual}")]
    Dimension {
        op: &'static str,
        axis: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Idx(#[from] IdxError),

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error(
        "training aborted: non-finite loss at epoch {epoch}, batch {batch} \
         (ce={ce}, kl={kl}, combined={combined})"
    )]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        ce: f64,
        kl: f64,
        combined: f64,
    },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn dim(op: &'static str, axis: &'static str, expected: usize, actual: usize) -> Self {
        Error::Dimension {
            op,
            axis,
            expected,
            actual,
        }
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}

/// IDX container parse failures.
#[derive(Debug, Error)]
pub enum IdxError {
    #[error("{path}: bad magic 0x{found:08x}, expected 0x{expected:08x}")]
    BadMagic {
        path: PathBuf,
        expected: u32,
        found: u32,
    },
    #[error("{path}: dimension mismatch: {detail}")]
    DimMismatch { path: PathBuf, detail: String },
    #[error("{path}: truncated: expected {expected} payload bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },
    #[error("{path}: label {label} at index {index} outside [0, 9]")]
    LabelOutOfRange {
        path: PathBuf,
        index: usize,
        label: u8,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Checkpoint load failures. Each maps to a distinct variant so callers can
/// tell a foreign file from a stale or damaged one.
#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic {found:?}, expected \"SAQ1\"")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported checkpoint version {found}, expected {expected}")]
    Version { expected: u32, found: u32 },
    #[error("checkpoint truncated while reading {what}")]
    Truncated { what: &'static str },
    #[error("unknown architecture id {0}")]
    Architecture(u8),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
