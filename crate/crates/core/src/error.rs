use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes are incompatible with the requested operation.
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// An argument lies outside the operation's domain (e.g. hour 24).
    #[error("domain error: {0}")]
    Domain(String),

    /// The API was driven in an unsupported way (backward twice, empty input, ...).
    #[error("usage error: {0}")]
    Usage(String),

    /// A forward op produced NaN or infinity from finite inputs.
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    /// Training loss became NaN or infinite.
    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },

    /// Internal bookkeeping disagrees with itself (e.g. a trainable tensor
    /// without a gradient).
    #[error("consistency error: {0}")]
    Consistency(String),

    /// Input data violates its schema.
    #[error("schema error: {0}")]
    Schema(String),

    /// Malformed binary or text artifact.
    #[error("format error in {path}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            detail: detail.into(),
        }
    }
}
