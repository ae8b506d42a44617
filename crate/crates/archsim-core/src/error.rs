//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A layer received or would produce a tensor of the wrong shape.
    #[error("shape error at layer {layer}: {msg}")]
    Shape { layer: usize, msg: String },

    /// A forward or backward pass produced a non-finite activation.
    #[error("non-finite activation at layer {layer} ({context})")]
    NonFinite { layer: usize, context: String },

    /// Invalid configuration value.
    #[error("invalid config: {0}")]
    Config(String),

    /// Training loss became non-finite.
    #[error("training diverged at epoch {epoch}, step {step} (loss {loss})")]
    Diverged { epoch: usize, step: usize, loss: f64 },

    /// A model pair shares no correctly-classified evaluation inputs.
    #[error("models {a} and {b} are incomparable: no shared correctly-classified inputs")]
    Incomparable { a: String, b: String },

    /// An operation that needs at least one sample received none.
    #[error("empty batch: {0}")]
    EmptyBatch(String),

    /// IDX image file with an unexpected magic number.
    #[error("bad IDX magic in {path}: expected {expected:#010x}, found {found:#010x}")]
    IdxMagic { path: String, expected: u32, found: u32 },

    /// IDX image and label files disagree on the sample count.
    #[error("IDX count mismatch: {images} images vs {labels} labels")]
    IdxCountMismatch { images: usize, labels: usize },

    /// IDX payload shorter than the header promises.
    #[error("truncated IDX file {path}: expected {expected} bytes, found {found}")]
    IdxTruncated { path: String, expected: usize, found: usize },

    /// Artifact on disk has the wrong format header or is inconsistent.
    #[error("bad artifact format: {0}")]
    Format(String),

    /// A sampling protocol cannot satisfy its constraints.
    #[error("infeasible request: {0}")]
    Infeasible(String),

    /// A statistic is undefined on the given inputs.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
