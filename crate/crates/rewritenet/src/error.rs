use std::path::PathBuf;

/// Errors shared across the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("sequence of length {n} too short for pattern length {lp}")]
    SequenceTooShort { n: usize, lp: usize },

    #[error("missing gradient for parameter '{0}'")]
    MissingGradient(String),

    #[error("no FST transition from state '{state}' on symbol '{symbol}'")]
    MissingTransition { state: String, symbol: String },

    #[error("token '{0}' not in vocabulary")]
    UnknownToken(String),

    #[error("vocabulary mismatch: {0}")]
    VocabMismatch(String),

    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("training aborted: non-finite loss at step {step} (batch dump: {dump})")]
    NanLoss { step: usize, dump: PathBuf },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
