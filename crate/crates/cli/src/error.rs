use odp_core::OdpError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, config files or parameter tuples: exit code 2.
    #[error("configuration error: {0}")]
    Config(String),
    /// Solver failures: exit code 1.
    #[error("{0}")]
    Solver(OdpError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    /// The acceptance suite ran and some criterion failed.
    #[error("{0} acceptance criteria failed")]
    Acceptance(usize),
}

impl From<OdpError> for CliError {
    fn from(e: OdpError) -> Self {
        if e.is_config_error() {
            CliError::Config(e.to_string())
        } else {
            CliError::Solver(e)
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }
}
