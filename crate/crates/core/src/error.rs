use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, AuditError>;

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: malformed header: {message}")]
    MalformedHeader { path: PathBuf, message: String },

    /// Row indices are 0-based sample indices (the CSV header is not counted).
    #[error("row {row}: {message}")]
    InvalidRow { row: usize, message: String },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("registry: {0}")]
    Registry(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("infeasible synthetic target: {0}")]
    Infeasible(String),
}

impl AuditError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AuditError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by a metric or correlation that has no
    /// defined value on otherwise valid input.
    pub fn is_undefined(&self) -> bool {
        matches!(
            self,
            AuditError::UndefinedMetric(_) | AuditError::UndefinedCorrelation(_)
        )
    }
}
