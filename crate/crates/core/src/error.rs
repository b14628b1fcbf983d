use thiserror::Error;

/// Errors raised by the numerical routines and the experiment harness.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not symmetric positive-definite")]
    NotPositiveDefinite,

    #[error("non-finite function value while differencing component {component}")]
    NonFiniteEvaluation { component: usize },

    #[error("divergent integral: {0}")]
    DivergedIntegral(String),

    #[error("non-finite gradient in replicate {replicate} at iteration {iteration} ({estimator})")]
    NumericalAbort {
        replicate: usize,
        iteration: usize,
        estimator: String,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
