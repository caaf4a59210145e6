//! Experiment runner: validated configs in, JSONL records, CSV mirrors and
//! a manifest out.
//!
//! Exit codes: `0` every internal check passed, `1` a check failed, `2`
//! invalid configuration, `3` I/O failure, `4` schema version mismatch.

pub mod cli;
pub mod config;
pub mod experiments;
pub mod plot;
pub mod records;

use isinglab::LabError;
use thiserror::Error;

pub use config::{ExperimentConfig, Kind, RawConfig};
pub use records::{run, Manifest, ResultRecord, RunOutcome, SCHEMA_VERSION};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("schema mismatch: {0}")]
    Schema(String),
    #[error("check failed: {0}")]
    Check(String),
    #[error(transparent)]
    Lab(#[from] LabError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Check(_) => 1,
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Schema(_) => 4,
            CliError::Lab(e) => match e {
                LabError::Numerical(_) | LabError::Fit(_) => 1,
                _ => 2,
            },
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
