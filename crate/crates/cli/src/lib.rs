//! Command implementations behind the `scootsafe` binary.

pub mod commands;
pub mod config;
pub mod pipeline;

use thiserror::Error;

pub use config::{Overrides, PipelineConfig};

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad or missing configuration, including referenced inputs that do not exist.
    #[error("config error: {0}")]
    Config(String),
    /// Input files that exist but cannot be parsed or are inconsistent.
    #[error("data error: {0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Data(_) => 1,
            CliError::Config(_) => 2,
        }
    }
}
