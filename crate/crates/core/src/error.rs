use std::io;

use thiserror::Error;

use crate::sync::SyncEstimate;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid frame, pilot, dataset or model configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// A buffer or tensor had the wrong length or dimensions.
    #[error("shape error: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },

    /// An argument outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The file is not in the expected binary layout.
    #[error("format error: {0}")]
    Format(String),

    /// The header promised more (or fewer) records than the file holds.
    #[error("truncated file: header declares {declared} records, found {found}")]
    Truncated { declared: u64, found: u64 },

    /// The correlation surface carried no usable peak. `fallback` holds the
    /// lowest-index tie-break so callers can still score it.
    #[error("ambiguous estimate: correlation surface is flat")]
    Ambiguous { fallback: SyncEstimate },

    #[error("training failure: {0}")]
    Training(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        Error::Shape {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
