//! Experiment runner for the grid market-clearing library.

pub mod config;
pub mod run;

use std::fmt;

#[derive(Debug)]
pub enum CliError {
    /// Unreadable, malformed or physically invalid configuration.
    Config(Vec<String>),
    Run(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Run(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(v) => {
                writeln!(f, "configuration error ({} problem{}):", v.len(), if v.len() == 1 { "" } else { "s" })?;
                for line in v {
                    writeln!(f, "  - {line}")?;
                }
                Ok(())
            }
            CliError::Run(e) => writeln!(f, "run failed: {e}"),
            CliError::Io(e) => writeln!(f, "i/o error: {e}"),
        }
    }
}

impl std::error::Error for CliError {}
