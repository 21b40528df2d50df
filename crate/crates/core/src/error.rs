use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input that violates a documented precondition.
    #[error("rejected input: {0}")]
    InvalidInput(String),

    #[error("degenerate embedding: {0}")]
    DegenerateEmbedding(String),

    #[error("bearing {bearing:.6} rad outside sonar field of view (±{half_fov:.6} rad)")]
    OutOfFov { bearing: f64, half_fov: f64 },

    #[error("optimization failed: {0}")]
    OptimizationFailure(String),

    #[error("covariance unavailable: {0}")]
    CovarianceUnavailable(String),

    #[error("gating error: {0}")]
    Gating(String),

    #[error("heading undefined: vehicle coincides with beacon {beacon}")]
    UndefinedHeading { beacon: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("empty map: {0}")]
    EmptyMap(String),

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// True for numerical failures of an otherwise well-formed problem.
    pub fn is_solver_failure(&self) -> bool {
        matches!(
            self,
            Error::OptimizationFailure(_) | Error::CovarianceUnavailable(_)
        )
    }
}
