use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("could not place {count} class means {min_separation} apart in {dim} dimensions after {attempts} attempts")]
    InfeasibleWorld {
        count: usize,
        dim: usize,
        min_separation: f64,
        attempts: usize,
    },

    #[error("empty batch: {0}")]
    EmptyBatch(&'static str),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("no class with ground truth to evaluate")]
    NothingToEvaluate,

    #[error("AUROC needs both ID and OOD samples")]
    SingleLabel,

    #[error("malformed {what}: {message}")]
    Parse { what: &'static str, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("runs are not comparable: {0}")]
    Incompatible(String),
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(what: &'static str, message: impl Into<String>) -> Self {
        Error::Parse {
            what,
            message: message.into(),
        }
    }
}
