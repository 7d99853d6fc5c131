use thiserror::Error;

/// Errors raised while building, solving or checking a flow network.
#[derive(Debug, Error)]
pub enum FlowError {
    /// Shapes or references that do not line up (wrong matrix size, unknown link, ...).
    #[error("structural error: {0}")]
    Structural(String),

    /// One or more semantic violations found while validating a scenario.
    #[error("validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("spectral radius not certified < 1 (bound {bound})")]
    NotCertified { bound: f64 },

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("{what} did not converge after {iterations} iterations (last residual {residual:e})")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl FlowError {
    /// Process exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            FlowError::NonConvergence { .. } | FlowError::Singular(_) => 2,
            _ => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            FlowError::Structural(_) => "structural",
            FlowError::Validation(_) => "validation",
            FlowError::NotCertified { .. } => "not_certified",
            FlowError::Singular(_) => "singular",
            FlowError::NonConvergence { .. } => "non_convergence",
            FlowError::Parse { .. } => "parse",
            FlowError::Io(_) => "io",
            FlowError::Csv(_) => "csv",
        }
    }
}

pub type Result<T> = std::result::Result<T, FlowError>;
