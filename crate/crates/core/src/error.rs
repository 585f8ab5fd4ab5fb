use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid correlation matrix: {0}")]
    InvalidCorrelation(String),

    #[error("invalid model specification: {0}")]
    InvalidModel(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error(
        "stretch factor s_h = {stretch:.6} must exceed 1; need h > {h_min:.6} at beta = {beta}"
    )]
    StretchTooSmall { stretch: f64, h_min: f64, beta: f64 },

    #[error(
        "inverse transform did not converge: residual {residual:e} after {iterations} iterations"
    )]
    InverseNotConverged { residual: f64, iterations: usize },

    #[error("empty sample batch")]
    EmptyBatch,

    #[error(
        "tail level mismatch: batch built for beta = {batch}, objective called with beta = {call}"
    )]
    BetaMismatch { batch: f64, call: f64 },

    #[error("weighted sample mass {mass:e} cannot cover the tail mass n*beta = {required:e}")]
    InsufficientMass { mass: f64, required: f64 },

    #[error("insufficient tail samples: n*beta = {tail:.1}, need at least {required:.0} (n >= {n_required})")]
    InsufficientTail {
        tail: f64,
        required: f64,
        n_required: usize,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Numerical(_)
                | Error::InverseNotConverged { .. }
                | Error::InsufficientMass { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
