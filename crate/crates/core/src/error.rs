//! Shared error type for the whole pipeline.

use thiserror::Error;

/// Errors surfaced by any stage of the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Dimension mismatch between operands.
    #[error("shape error: {0}")]
    Shape(String),

    /// Invalid or inconsistent configuration.
    #[error("config error: {0}")]
    Config(String),

    /// A documented type invariant was violated.
    #[error("invariant violation: {0}")]
    Invariant(String),

    /// Skip-connection or coordinate alignment mismatch.
    #[error("alignment error: {0}")]
    Alignment(String),

    /// An operation received an empty input it cannot handle.
    #[error("empty input: {0}")]
    EmptyInput(String),

    /// Degenerate numeric input (all-zero signal, zero denominator).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// A bitstream or file could not be parsed.
    #[error("decode error: {0}")]
    Decode(String),

    /// Code construction failed for the given seed after bounded retries.
    #[error("seed error: {0}")]
    Seed(String),

    /// Training diverged (non-finite loss).
    #[error("training error: loss became non-finite at epoch {epoch}")]
    Training { epoch: usize },

    /// Synthetic scene generation could not place the requested objects.
    #[error("generation error: {0}")]
    Generation(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
