//! Pipeline orchestration behind the `legacydoc` binary.
//!
//! Every stage writes under `<output_dir>/<stage>/` and finishes by writing
//! `stage.json`, which lists each artifact with its SHA-256 and the digest
//! of the configuration that produced it. A stage without that file did
//! not complete.

pub mod artifact;
pub mod config;
pub mod stages;

use thiserror::Error;

pub use config::{LoadedConfig, RunConfig};
pub use stages::{run_pipeline, run_stage, Options, Stage};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("stage {stage} failed: {message}")]
    Stage { stage: String, message: String },
    #[error("provider exhausted: {0}")]
    Exhausted(String),
}

impl CliError {
    pub fn validation(message: impl Into<String>) -> Self {
        CliError::Validation(message.into())
    }

    pub fn stage(stage: impl std::fmt::Display, message: impl std::fmt::Display) -> Self {
        CliError::Stage {
            stage: stage.to_string(),
            message: message.to_string(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Stage { .. } => 2,
            CliError::Exhausted(_) => 3,
        }
    }
}
