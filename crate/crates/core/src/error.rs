use thiserror::Error;

pub type Result<T, E = RodError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum RodError {
    #[error("unsupported dimension: expected {expected}, got {got}")]
    UnsupportedDimension { expected: usize, got: usize },

    #[error("invalid parameter `{name}`: must satisfy {constraint} (got {value})")]
    InvalidParam {
        name: &'static str,
        constraint: &'static str,
        value: String,
    },

    #[error("configuration: {0}")]
    Config(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("degenerate state: {0}")]
    Degenerate(String),

    #[error("singular point: {0}")]
    Singularity(String),

    #[error("invalid slack parameter: {0}")]
    InvalidSlack(String),

    #[error("parameters outside the cycle regime: {0}")]
    Regime(String),

    #[error("integration failed at t = {t}: {reason}")]
    IntegrationFailure {
        t: f64,
        reason: String,
        last_state: Vec<f64>,
    },

    #[error("no return to the section within time budget {budget}")]
    NoReturn { budget: f64 },

    #[error("fixed-point iteration did not converge after {iterations} returns (last gap {last_gap:e})")]
    NonConvergence { iterations: usize, last_gap: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl RodError {
    pub(crate) fn param(name: &'static str, constraint: &'static str, value: impl ToString) -> Self {
        RodError::InvalidParam {
            name,
            constraint,
            value: value.to_string(),
        }
    }
}
