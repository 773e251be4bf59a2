use thiserror::Error;

/// Errors raised anywhere in the estimation stack.
#[derive(Debug, Error)]
pub enum DfmError {
    /// Matrix or vector shapes do not line up with each other or with the model dimensions.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A configuration value is outside its admissible range.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Model parameters cannot be used for the requested operation.
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// The innovation covariance at time `t` (1-based) could not be inverted.
    #[error("innovation covariance numerically singular at t = {t}")]
    SingularInnovation { t: usize },

    #[error("numerically singular matrix: {0}")]
    Singular(String),

    /// Two sample eigenvalues coincide where the factor space must be separated.
    #[error("eigenvalue tie at position {position}: {upper} vs {lower}")]
    EigenTie {
        position: usize,
        upper: f64,
        lower: f64,
    },

    #[error("EM diverged at iteration {iter}: log-likelihood {loglik}")]
    Divergence { iter: usize, loglik: f64 },

    /// The marginal log-likelihood dropped; EM guarantees ascent so this indicates a defect.
    #[error("EM log-likelihood decreased at iteration {iter}: {before} -> {after}")]
    NonMonotone { iter: usize, before: f64, after: f64 },

    #[error("cell '{cell}' aborted: {failures} of {replications} replications failed")]
    CellAborted {
        cell: String,
        failures: usize,
        replications: usize,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl DfmError {
    /// True for errors caused by bad user input rather than numerical breakdown.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            DfmError::Shape(_)
                | DfmError::InvalidConfig(_)
                | DfmError::InvalidParams(_)
                | DfmError::NonFinite(_)
                | DfmError::Parse { .. }
                | DfmError::Csv(_)
                | DfmError::Io(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, DfmError>;
