use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },

    #[error("backward called on a tensor with {numel} elements; loss must be scalar")]
    NonScalarLoss { numel: usize },

    #[error("backward called on a tensor that was not produced by recorded operations")]
    NoGraph,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("group of {got} images is incompatible: {reason}")]
    GroupSize { got: usize, reason: String },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("image format error in {path}: {reason}")]
    Image { path: PathBuf, reason: String },

    #[error("training aborted at step {step}: non-finite loss {loss}")]
    NonFiniteLoss { step: usize, loss: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::Shape {
        op,
        detail: detail.into(),
    }
}
