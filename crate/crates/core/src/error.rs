use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("quaternion norm {norm} is not within tolerance of 1")]
    InvalidQuaternion { norm: f64 },

    #[error("innovation covariance is singular or ill-conditioned (condition estimate {condition:e})")]
    SingularInnovation { condition: f64 },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(&'static str),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("all particle weights are zero or non-finite")]
    DegenerateWeights,

    #[error("all ancestor weights for the reference trajectory are zero")]
    DegenerateAncestors,

    #[error("at step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("sequence length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("degenerate point configuration: {0}")]
    DegeneratePoints(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    /// Attaches the time step at which an inner operation failed.
    pub fn at_step(self, step: usize) -> Error {
        match self {
            e @ Error::AtStep { .. } => e,
            e => Error::AtStep {
                step,
                source: Box::new(e),
            },
        }
    }
}
