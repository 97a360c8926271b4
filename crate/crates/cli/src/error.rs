use thiserror::Error;

/// Failures mapped to process exit codes.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration or arguments; exit code 1.
    #[error("{0}")]
    Validation(String),

    /// Anything that goes wrong while running; exit code 2.
    #[error(transparent)]
    Runtime(#[from] lightlink_core::Error),

    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) | CliError::Failed(_) => 2,
        }
    }
}
