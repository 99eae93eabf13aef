use thiserror::Error;

/// Errors raised by the simulators, the numerical routines and the harness.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A split-tree parameter inequality `0 < s`, `s0 <= s`, `b*s1 <= s + 1 - s0` failed.
    #[error("invalid split parameters: {0}")]
    Params(String),

    #[error("invalid split family: {0}")]
    Family(String),

    #[error("{method} constants are not available for family {family}")]
    MethodUnavailable { method: &'static str, family: String },

    /// An argument outside the operation's domain.
    #[error("invalid argument: {0}")]
    Domain(String),

    /// A size, memory or visit budget was exceeded.
    #[error("budget exceeded: {0}")]
    Budget(String),

    /// Numerical quadrature or root finding could not reach the requested accuracy.
    #[error("quadrature did not converge (estimated error {achieved:e}, requested {requested:e})")]
    NoConvergence { achieved: f64, requested: f64 },

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
