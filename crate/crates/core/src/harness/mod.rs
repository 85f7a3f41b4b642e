//! Experiment orchestration: configuration, synthetic data, phase execution,
//! the multi-seed run matrix, and CSV/JSON report emission.

pub mod config;
pub mod csvio;
pub mod matrix;
pub mod phases;
pub mod report;
pub mod synth;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("missing artifact {0}; run the earlier phase first")]
    MissingArtifact(String),
    #[error("io failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv failure: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed file {path}: {message}")]
    Malformed { path: String, message: String },
    #[error(transparent)]
    Pipeline(#[from] crate::pipeline::PipelineError),
    #[error(transparent)]
    Model(#[from] crate::models::ModelError),
}

pub use config::{DataSource, ExperimentConfig, SynthSpec};
pub use matrix::{run_matrix, MatrixOutcome};
pub use phases::{run_phase, Phase};
pub use report::RunReport;
pub use synth::{synth_generate, SynthOutput};
