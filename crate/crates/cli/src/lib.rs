//! Experiment driver: config ingestion, pipeline commands and reproducible
//! run records.

pub mod commands;
pub mod config;
pub mod io;

use std::path::Path;
use thiserror::Error;

pub const EXIT_OK: u8 = 0;
pub const EXIT_VALIDATION: u8 = 1;
pub const EXIT_RUNTIME: u8 = 2;
pub const EXIT_AMBIGUOUS: u8 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("validation: {0}")]
    Validation(String),
    #[error("measurement was recorded for medium {found}, the config describes {expected}; pass --override-hash to invert it anyway")]
    HashMismatch { found: String, expected: String },
    #[error("{stage}: {message}")]
    Runtime { stage: &'static str, message: String },
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Runtime {
            stage: "io",
            message: format!("{}: {e}", path.display()),
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Validation(_) | CliError::HashMismatch { .. } => EXIT_VALIDATION,
            CliError::Runtime { .. } => EXIT_RUNTIME,
        }
    }
}
