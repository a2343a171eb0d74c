use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value {value} at node {node:?}")]
    NonFinite { node: Vec<f64>, value: f64 },

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("infeasible point: {0}")]
    Infeasible(String),

    #[error("dual variable {which}[{index}] = {value} lies outside the conjugate domain")]
    OutOfDomain {
        which: &'static str,
        index: usize,
        value: f64,
    },

    #[error("training diverged at iteration {iteration}: {what}")]
    Diverged { iteration: usize, what: String },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("config line {line}: {message}")]
    ConfigLine { line: usize, message: String },

    #[error("iteration budget of {budget} exceeded (residual {residual:e})")]
    BudgetExceeded { budget: usize, residual: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
