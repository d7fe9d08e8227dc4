use thiserror::Error;

/// Errors raised by the numerical routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numerical consistency error: {0}")]
    NumericalConsistency(String),

    #[error("capacity exceeded: {needed} entries needed, limit is {limit}")]
    Capacity { needed: u128, limit: u128 },

    #[error("margin {margin} is degenerate (point mass at zero)")]
    DegenerateMargin { margin: usize },

    #[error("degenerate estimator: {0}")]
    DegenerateEstimator(String),

    #[error("model schema error: {0}")]
    Schema(String),
}

impl Error {
    /// True for errors caused by malformed or out-of-range user input,
    /// as opposed to numerical failures during evaluation.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Dimension(_) | Error::InvalidInput(_) | Error::Schema(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_finite(x: f64, what: &str) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{what} must be finite, got {x}")))
    }
}
