use thiserror::Error;

/// Errors shared by the analytic and simulation engines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("domain error: {0}")]
    Domain(String),

    /// Configuration text problem; the message carries the line number.
    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),

    #[error("fixed point did not converge after {iterations} iterations (residual {residual:.3e}, best tau {tau}, p_b {p_b})")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        tau: f64,
        p_b: f64,
    },
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn param(msg: impl Into<String>) -> Error {
    Error::Parameter(msg.into())
}
