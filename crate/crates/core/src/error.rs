use thiserror::Error;

pub type Result<T> = std::result::Result<T, OdpError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OdpError {
    /// A parameter tuple or configuration violates a model constraint.
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    /// A symmetry group has an inadmissible first mode or is malformed.
    #[error("invalid symmetry group: {0}")]
    InvalidGroup(String),

    #[error("grid mismatch: expected {expected} samples, got {got}")]
    GridMismatch { expected: usize, got: usize },

    #[error("newton iteration diverged after {iterations} iterations (residual {residual:.3e})")]
    NewtonDivergence { iterations: usize, residual: f64 },

    #[error("newton iteration collapsed to the trivial solution u = 0")]
    TrivialSolution,

    #[error("positivity violated: min interior value {min_value:.3e}")]
    Positivity { min_value: f64 },

    #[error("eigenvalue solver failed: {0}")]
    Eigen(String),

    #[error("spectral sign pattern violated: {0}")]
    SignPattern(String),

    #[error("mode {degree} operator is nearly singular (condition estimate {cond:.3e})")]
    NearSingular { degree: usize, cond: f64 },

    #[error("singular linear system at row {0}")]
    Singular(usize),

    #[error("no sign change found: {0}")]
    NoBracket(String),

    #[error("nonpositive Dirichlet margin {margin:.3e} at lambda = {lambda} (mode {degree})")]
    WindowInvalid { margin: f64, lambda: f64, degree: usize },

    #[error("continuation failed at amplitude {amplitude:.3e}: {reason}")]
    Continuation { amplitude: f64, reason: String },
}

impl OdpError {
    /// True for errors caused by user input rather than solver failure.
    pub fn is_config_error(&self) -> bool {
        matches!(self, OdpError::InvalidParams(_) | OdpError::InvalidGroup(_))
    }
}
