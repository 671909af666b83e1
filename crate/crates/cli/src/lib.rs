//! Library side of the `osteopipe` binary: configuration, stage errors and
//! the end-to-end pipeline.

pub mod config;
pub mod exit;
pub mod pipeline;

pub use config::PipelineConfig;
pub use exit::{Stage, StageError};
pub use pipeline::{run_pipeline, PipelineRun};
