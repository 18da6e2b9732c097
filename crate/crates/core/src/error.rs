//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed model data (shape mismatch, non-stochastic rows, weights
    /// with the wrong definiteness, ...).
    #[error("validation: {0}")]
    Validation(String),

    /// A channel state from which a successful delivery is impossible; the
    /// conditional burst distribution is undefined there.
    #[error("channel state s{state} has zero probability of a successful delivery on the next step")]
    DegenerateState { state: usize },

    /// The channel (or a derived mode chain) is not ergodic.
    #[error("chain is not ergodic: {0}")]
    NonErgodic(String),

    /// The burst-length truncation threshold was not reached within the cap.
    #[error("burst truncation cap {cap} exceeded; residual tail mass {shortfall:.3e}")]
    BurstCapExceeded { cap: usize, shortfall: f64 },

    /// An iterative computation ran out of its iteration budget.
    #[error("{what} did not converge within {iterations} iterations")]
    Convergence { what: &'static str, iterations: usize },

    /// Riccati synthesis failure (typically a non-positive-definite input
    /// quadratic, signalling inconsistent weights or model data).
    #[error("synthesis: {0}")]
    Synthesis(String),

    /// An operation was invoked outside its stated precondition.
    #[error("precondition: {0}")]
    Precondition(String),

    /// Configuration document errors.
    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
