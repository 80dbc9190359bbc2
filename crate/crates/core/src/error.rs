//! Error type shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong while configuring, evaluating or optimizing
/// the system model.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration value or violated parameter invariant.
    #[error("config error: {0}")]
    Config(String),

    /// Mismatched vector/matrix dimensions between caller and model.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A numerical precondition failed (non-PSD input, negative interference,
    /// complex trace where a real one was required, ...).
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Binary matrix container with a malformed header or truncated payload.
    #[error("format error: {0}")]
    Format(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
