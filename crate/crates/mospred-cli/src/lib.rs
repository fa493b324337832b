//! File formats, configuration, and pipeline orchestration around the
//! core predictor. Everything here owns the std-only concerns: paths,
//! CSV and binary IO, hashing, and the command-line surface.

pub mod config;
pub mod io;
pub mod manifest;
pub mod pipeline;

use std::fmt;

/// CLI-level failures, split by exit code: validation problems (bad
/// config, malformed inputs, missing prerequisites) exit 1, runtime
/// failures (numeric blow-ups, undefined statistics, write errors) exit 2.
#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Runtime(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(msg) => write!(f, "{msg}"),
            CliError::Runtime(msg) => write!(f, "{msg}"),
        }
    }
}

impl std::error::Error for CliError {}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

/// Wraps any displayable error as a validation failure (exit 1).
pub fn validation(e: impl fmt::Display) -> CliError {
    CliError::Validation(e.to_string())
}

/// Wraps any displayable error as a runtime failure (exit 2).
pub fn runtime(e: impl fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

pub type CliResult<T> = Result<T, CliError>;
