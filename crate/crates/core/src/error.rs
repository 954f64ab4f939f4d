use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("numerical failure: {message} (residual {residual:e})")]
    Numerical { message: String, residual: f64 },

    #[error("bracket construction failed: {0}")]
    Bracket(String),

    #[error("inner iteration did not converge after {iterations} iterations (gap {gap:e})")]
    Convergence { iterations: usize, gap: f64 },

    #[error("monotone ordering violated by {violation:e} at inner iterate {iterate}")]
    Ordering { iterate: usize, violation: f64 },
}

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
