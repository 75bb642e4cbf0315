use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("insufficient records for {what}: have {have}, need {need}")]
    InsufficientRecords {
        what: &'static str,
        have: usize,
        need: usize,
    },

    #[error("rank-deficient design matrix ({0}); add samples or remove features")]
    RankDeficient(String),

    #[error("surrogate fit too weak for sensitivity claims (R² = {r2:.4} < {min})")]
    WeakSurrogate { r2: f64, min: f64 },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("I/O error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
