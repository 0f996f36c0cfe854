use thiserror::Error;

/// Errors raised by the model, simulation, approximation and inference layers.
#[derive(Debug, Error)]
pub enum Error {
    /// A state lies outside the probability simplex beyond tolerance.
    #[error("state {0:?} is outside the simplex")]
    Domain(Vec<f64>),
    /// A numeric precondition failed (negative eigenvalue, non-finite value, ...).
    #[error("numeric error: {0}")]
    Numeric(String),
    /// A matrix that must be inverted is singular or too badly conditioned.
    #[error("singular matrix: {0}")]
    Singular(String),
    /// The Gillespie event budget was exhausted.
    #[error("event cap of {0} exceeded")]
    Overflow(usize),
    /// The ODE solution left the admissible box.
    #[error("ODE blow-up at t = {t}: {state:?}")]
    BlowUp { t: f64, state: Vec<f64> },
    /// Input data cannot support the requested operation.
    #[error("degenerate input: {0}")]
    Degenerate(String),
    /// Invalid parameters or configuration.
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
