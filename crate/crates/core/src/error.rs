use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("index {index} out of range for {table} (len {len})")]
    Bounds {
        table: String,
        index: usize,
        len: usize,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("empty corpus after filtering: {0}")]
    EmptyCorpus(String),

    #[error("sampling error: {0}")]
    Sampling(String),

    #[error("non-finite loss at example {index}: {detail}")]
    NonFinite { index: usize, detail: String },

    #[error("non-deterministic loss function: {first} != {second}")]
    NonDeterministic { first: f64, second: f64 },

    #[error("corrupt checkpoint {path}: {reason}")]
    CorruptCheckpoint { path: PathBuf, reason: String },

    #[error("parse error at {location}: {reason}")]
    Parse { location: String, reason: String },

    #[error("missing recommendations for users {0:?}")]
    MissingUsers(Vec<usize>),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-parsable tag used by the command-line runner.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::Bounds { .. } => "bounds",
            Error::Contract(_) => "contract",
            Error::Config(_) => "config",
            Error::EmptyCorpus(_) => "empty_corpus",
            Error::Sampling(_) => "sampling",
            Error::NonFinite { .. } => "non_finite",
            Error::NonDeterministic { .. } => "non_deterministic",
            Error::CorruptCheckpoint { .. } => "corrupt_checkpoint",
            Error::Parse { .. } => "parse",
            Error::MissingUsers(_) => "missing_users",
            Error::Io { .. } => "io",
            Error::Csv(_) => "csv",
        }
    }
}
