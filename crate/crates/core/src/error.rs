use thiserror::Error;

/// Errors raised by the numerical routines in this crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Malformed or inconsistent arguments (dimension mismatch, bad arity, ...).
    #[error("invalid input: {0}")]
    Input(String),
    /// The request exceeds a configured resource cap.
    #[error("resource limit exceeded: {0}")]
    Resource(String),
    /// A computation produced a non-finite value or failed to converge.
    #[error("numeric failure: {0}")]
    Numeric(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn input<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Input(msg.into()))
}
