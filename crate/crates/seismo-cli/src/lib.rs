//! Library surface of the `seismo` command-line tool: configuration
//! loading and the command implementations, kept callable for integration
//! tests.

pub mod commands;
pub mod config;

use thiserror::Error;

/// Errors mapped onto process exit codes: config/parse errors exit 2,
/// gradient-check failures exit 3, everything else exits 1.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
    #[error("gradient check failed: max relative error {max_rel_error:.3e}")]
    GradcheckFailed { max_rel_error: f64 },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
            CliError::GradcheckFailed { .. } => 3,
        }
    }
}
