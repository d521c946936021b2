//! CLI error taxonomy mapped onto process exit codes.

use std::fmt;
use std::process::ExitCode;

/// Top-level failure categories of the command-line tool.
#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or usage; exit code 2.
    Config(String),
    /// Missing or invalid data files, failed generation; exit code 3.
    Data(String),
    /// A model fit failed or diverged; exit code 4.
    Training(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Config(_) => ExitCode::from(2),
            CliError::Data(_) => ExitCode::from(3),
            CliError::Training(_) => ExitCode::from(4),
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        CliError::Data(msg.into())
    }

    pub fn training(msg: impl Into<String>) -> Self {
        CliError::Training(msg.into())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Training(m) => write!(f, "training error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}
