use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Input outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// A numeric evaluation failed (derivative blow-up, degenerate denominator, ...).
    #[error("numeric error: {0}")]
    Numeric(String),
    /// Root bracketing failed after bracket expansion.
    #[error("no root: {0}")]
    NoRoot(String),
    /// Malformed configuration or descriptor.
    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
