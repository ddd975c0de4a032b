use thiserror::Error;

/// Failure of a command, carrying its exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, config values or paths; exit code 1.
    #[error("{0}")]
    Usage(String),

    /// The work ran but an invariant or tolerance did not hold; exit code 2.
    #[error("{0}")]
    Failed(String),

    #[error(transparent)]
    Core(#[from] sttformer::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Core(sttformer::Error::Config(_)) => 1,
            _ => 2,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(msg.into()))
}
