use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    Assertion(String),
    #[error(transparent)]
    Core(#[from] lga_core::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// 1 for failed checks, 2 for bad configuration, 3 for everything that
    /// went wrong while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Assertion(_) => 1,
            CliError::Config(_) | CliError::Core(lga_core::Error::InvalidConfig(_)) => 2,
            _ => 3,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
