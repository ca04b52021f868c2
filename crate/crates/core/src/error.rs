use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("file truncated inside record {index}")]
    Truncated { index: u64 },

    #[error("record count mismatch: header says {expected}, file holds {found}")]
    CountMismatch { expected: u64, found: u64 },

    #[error("malformed file: {0}")]
    Format(String),

    #[error("record {index}: {reason}")]
    Invariant { index: usize, reason: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("reference simulation deadlocked at tick {tick}: {detail}")]
    Deadlock { tick: u64, detail: String },

    #[error("simulation made no progress at tick {tick}: {detail}")]
    Livelock { tick: u64, detail: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },

    #[error("predictor failed: {0}")]
    Predictor(String),

    #[error("sub-trace {sub_trace}: {source}")]
    SubTrace {
        sub_trace: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{0}")]
    InvalidArgument(String),
}

impl Error {
    /// Short machine-readable tag used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io(_) => "io",
            Error::BadMagic { .. } => "bad_magic",
            Error::VersionMismatch { .. } => "version_mismatch",
            Error::Truncated { .. } => "truncated",
            Error::CountMismatch { .. } => "count_mismatch",
            Error::Format(_) => "format",
            Error::Invariant { .. } => "invariant",
            Error::Config(_) => "config",
            Error::Deadlock { .. } => "deadlock",
            Error::Livelock { .. } => "livelock",
            Error::Shape(_) => "shape",
            Error::Diverged { .. } => "diverged",
            Error::Predictor(_) => "predictor",
            Error::SubTrace { .. } => "sub_trace",
            Error::InvalidArgument(_) => "invalid_argument",
        }
    }
}
