use fdp_core::FdpError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    /// Errors after validation are runtime failures whatever their origin.
    pub fn into_runtime(self) -> Self {
        match self {
            CliError::Validation(m) => CliError::Runtime(m),
            e => e,
        }
    }
}

impl From<FdpError> for CliError {
    fn from(e: FdpError) -> Self {
        match e {
            FdpError::Config(_) | FdpError::Argument(_) | FdpError::Domain(_) | FdpError::Resolution(_) => {
                CliError::Validation(e.to_string())
            }
            FdpError::Generation(_) | FdpError::Protocol(_) | FdpError::Internal(_) => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(format!("io: {e}"))
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Runtime(format!("csv: {e}"))
    }
}
