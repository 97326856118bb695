use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing required column '{0}'")]
    MissingColumn(String),

    #[error("row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("account {account}: {message}")]
    Validation { account: String, message: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("series of length {len} is shorter than the minimum {min}")]
    TooShort { len: usize, min: usize },

    #[error("degenerate series: {0}")]
    DegenerateSeries(String),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("labels contain a single class ({0} observations)")]
    OneClass(usize),

    #[error("design matrix is rank deficient; collinear columns: {}", .0.join(", "))]
    RankDeficient(Vec<String>),

    #[error("account {account}: {source}")]
    Account {
        account: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn validation(account: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            account: account.into(),
            message: message.into(),
        }
    }

    pub(crate) fn for_account(self, account: impl Into<String>) -> Self {
        Error::Account {
            account: account.into(),
            source: Box::new(self),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by the caller's inputs or environment
    /// (files, flags, configuration) rather than by a computation.
    pub fn is_usage(&self) -> bool {
        match self {
            Error::Io { .. } | Error::Config(_) | Error::MissingColumn(_) | Error::Parse { .. } => {
                true
            }
            Error::Csv(e) => e.is_io_error(),
            Error::Account { source, .. } => source.is_usage(),
            _ => false,
        }
    }
}
