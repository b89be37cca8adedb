use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("duplicate record key {0}")]
    DuplicateKey(String),

    #[error("unknown mode label {0:?}")]
    UnknownMode(String),

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("unknown speaker {0:?}")]
    UnknownSpeaker(String),

    #[error("no normal/{mode} utterance pairs found ({skipped} unmatched records)")]
    NoPairs { mode: String, skipped: usize },

    #[error("corpus has no records of mode {0:?}")]
    MissingMode(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("cannot score a zero vector")]
    ZeroVector,

    #[error("EER needs both target and non-target scores")]
    SingleClass,

    #[error("model of kind {kind} is missing its {part}")]
    MissingModelPart { kind: String, part: &'static str },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("fold holding out {speaker:?}: {source}")]
    Fold {
        speaker: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

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

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
