//! Library surface of the command-line runner, exposed so integration
//! tests can drive the same code paths as the binary.

pub mod artifacts;
pub mod config;
pub mod runner;
pub mod verify;

use std::fmt;

/// CLI failure classes, mapped onto process exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Invalid or inconsistent configuration (exit 2).
    Config(String),
    /// A solver, estimator, or artifact failure at run time (exit 3).
    Run(stmlmc::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Run(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "config error: {msg}"),
            CliError::Run(e) => write!(f, "run error: {e}"),
        }
    }
}

impl std::error::Error for CliError {}
