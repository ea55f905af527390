//! Batch pipeline over robot-manipulation episodes: occupancy, condition
//! maps, camera transfer, action tensors, manifests and validation.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod pipeline;
pub mod validate;

pub use config::{PipelineConfig, Preset};
pub use error::{CliError, CliResult};
pub use manifest::{EpisodeManifest, RunReport};
pub use pipeline::run_pipeline;
pub use validate::validate_dataset;
