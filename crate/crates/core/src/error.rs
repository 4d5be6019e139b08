//! Error types shared across the library.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid grid or solver configuration (odd sizes, bad bounds, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// A parameter value is outside the range an operation accepts.
    #[error("argument error: {0}")]
    Argument(String),

    /// A parameter is outside the mathematical domain of the operator
    /// (e.g. negative order passed to the fractional Laplacian).
    #[error("domain error: {0}")]
    Domain(String),

    /// An input field violates a stated precondition (e.g. non-zero mean).
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Objective evaluated on or outside the open parameter box; the
    /// barrier is infinite there.
    #[error("evaluation outside the open parameter box: {0}")]
    OutOfDomain(String),

    /// Backtracking line search failed to find a decrease.
    #[error("line search stalled at iteration {iteration} after {halvings} halvings (best value {best_value:e})")]
    LineSearchStall {
        iteration: usize,
        halvings: usize,
        best_value: f64,
        best_params: Vec<f64>,
    },

    /// A flow or solve produced non-finite values.
    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;
