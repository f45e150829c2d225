use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CarpError>;

#[derive(Debug, Error)]
pub enum CarpError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{malformed} of {total} lines in {path} are malformed (limit is 10%)")]
    TooManyMalformed {
        path: PathBuf,
        malformed: usize,
        total: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("rating {rating} for ({user}, {item}) is outside [1, {max}]")]
    RatingOutOfRange {
        user: String,
        item: String,
        rating: f64,
        max: f64,
    },

    #[error("empty batch")]
    EmptyBatch,

    #[error("every position of the document is masked")]
    EmptyDocument,

    #[error("vocabulary hash mismatch: checkpoint has {expected}, dataset has {found}")]
    VocabularyMismatch { expected: String, found: String },

    #[error("non-finite loss at epoch {epoch}, batch {batch}: {detail}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        detail: String,
    },

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl CarpError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CarpError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        CarpError::Format {
            what,
            detail: detail.into(),
        }
    }
}
