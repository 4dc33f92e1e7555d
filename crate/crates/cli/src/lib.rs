//! Library half of the `sweeps` command-line tool: run configuration,
//! command execution and CSV output.

pub mod commands;
pub mod config;
pub mod table;

/// Errors with their process exit codes.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Invalid configuration or input files (exit code 2).
    #[error("configuration error: {0}")]
    Config(String),
    /// Failure while running (exit code 3).
    #[error("runtime failure: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}
