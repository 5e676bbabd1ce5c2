//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand extents do not line up (binary ops, convolutions, metrics).
    #[error("shape error: {0}")]
    Shape(String),

    /// A configuration value violates a documented constraint.
    #[error("config error: {0}")]
    Config(String),

    /// Input is outside an operation's domain (e.g. empty reduction).
    #[error("domain error: {0}")]
    Domain(String),

    /// Requested extents overflow the addressable size.
    #[error("allocation error: {0}")]
    Alloc(String),

    /// A container file does not start with a well-formed TVWD header.
    #[error("format error: {0}")]
    Format(String),

    /// A container file is structurally valid but its payload is damaged.
    #[error("corruption error: {0}")]
    Corruption(String),

    /// A store/config cross-check failed; details carry the offending names.
    #[error("validation error: {0}")]
    Validation(String),

    /// The training loss left the finite range.
    #[error("training diverged at step {step}: loss = {loss}")]
    Divergence { step: u64, loss: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad user input (CLI exit code 1);
    /// everything else is a runtime failure (exit code 2).
    pub fn is_user_error(&self) -> bool {
        !matches!(self, Error::Divergence { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
