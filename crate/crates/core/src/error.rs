use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("point {0:?} lies outside the domain")]
    OutsideDomain(Vec<f64>),

    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("invalid projection: {0}")]
    InvalidProjection(String),

    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),

    #[error("kernel smoothness violated: {0}")]
    Smoothness(String),

    #[error("invalid operator: {0}")]
    InvalidOperator(String),

    #[error("invalid constraint set: {0}")]
    InvalidConstraint(String),

    #[error("degenerate geometry at {point:?}: {reason}")]
    DegenerateGeometry { point: Vec<f64>, reason: String },

    #[error("matrix of size {size} not positive definite after jitter {jitter:e} ({detail})")]
    NotPositiveDefinite { size: usize, jitter: f64, detail: String },

    #[error("expression error: {0}")]
    Expr(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("base draw is missing {0}")]
    MissingDrawValue(String),

    #[error("convergence check failed: {0}")]
    Convergence(String),

    #[error("every hyperparameter candidate failed; last error: {0}")]
    AllCandidatesFailed(String),

    #[error("configuration error: {0}")]
    Config(String),
}

impl Error {
    /// True for failures of the numerical linear algebra rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite { .. }
                | Error::DegenerateGeometry { .. }
                | Error::Convergence(_)
                | Error::AllCandidatesFailed(_)
        )
    }
}
