use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("token {token:?} is tagged with conflicting languages")]
    ConflictingTag { token: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: String, got: String },

    #[error("row {row} has zero norm and cannot be normalized")]
    ZeroRow { row: usize },

    #[error("zero-norm mean vector in cosine distance")]
    ZeroMean,

    #[error("language {0} has no vocabulary rows; partition undefined")]
    EmptyLanguage(&'static str),

    #[error("gaussian fit needs at least 2 rows, got {0}")]
    TooFewRows(usize),

    #[error("covariance factorization failed; increase the ridge (current {ridge})")]
    SingularCovariance { ridge: f64 },

    #[error("empty sequence")]
    EmptySequence,

    #[error("empty batch")]
    EmptyBatch,

    #[error("no dictionary pairs left after frequency filtering (threshold {0} too high)")]
    EmptyTranslationSet(u64),

    #[error("checkpoint format error: {0}")]
    CheckpointFormat(String),

    #[error("checkpoint vocabulary hash does not match the supplied vocabulary")]
    VocabHashMismatch,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
