use thiserror::Error;

/// Errors raised by the pursuit library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum PursuitError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A feature point ended up on or behind the image plane.
    #[error("feature {index} is behind the camera (depth {depth:.4})")]
    FeatureBehindCamera { index: usize, depth: f64 },

    /// The image Jacobian lost rank; the estimation error cannot be recovered.
    #[error("degenerate view: smallest singular value {sigma_min:.3e} (largest {sigma_max:.3e})")]
    DegenerateView { sigma_min: f64, sigma_max: f64 },

    #[error("ill-conditioned GP model: {0}")]
    IllConditionedModel(String),

    #[error("hyperparameter fit failed: {0}")]
    FitFailure(String),

    /// A bounded-rotation assumption or bound precondition does not hold.
    #[error("assumption violated: {0}")]
    AssumptionViolation(String),

    #[error("io error: {0}")]
    Io(String),

    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, PursuitError>;

impl From<std::io::Error> for PursuitError {
    fn from(e: std::io::Error) -> Self {
        PursuitError::Io(e.to_string())
    }
}

impl From<csv::Error> for PursuitError {
    fn from(e: csv::Error) -> Self {
        PursuitError::Format(e.to_string())
    }
}

impl From<serde_json::Error> for PursuitError {
    fn from(e: serde_json::Error) -> Self {
        PursuitError::Format(e.to_string())
    }
}
