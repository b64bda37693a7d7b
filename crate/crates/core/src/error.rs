use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("Euler-rate map is singular: |pitch| = {pitch:.6} rad exceeds the allowed domain (limit {limit:.6} rad)")]
    RepresentationSingularity { pitch: f64, limit: f64 },

    #[error("kinematic configuration too close to singular: det(J J^T) = {measure:.3e} <= {threshold:.3e}")]
    NearSingular { measure: f64, threshold: f64 },

    #[error("distributed inertia is ill-conditioned: cond(M M^T) = {condition:.3e}")]
    IllConditioned { condition: f64 },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("point is outside the free space (clearance {clearance:.4} m)")]
    OutOfFreeSpace { clearance: f64 },

    #[error("constrained acceleration system is singular ({detail})")]
    SingularKkt { detail: String },

    #[error("initial state is outside the model domain: {0}")]
    InfeasibleStart(String),

    #[error("controller {controller} was handed a measurement of agent {agent}")]
    IsolationViolation { controller: usize, agent: usize },

    #[error("invalid scenario: {0}")]
    Validation(String),

    #[error("{0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
