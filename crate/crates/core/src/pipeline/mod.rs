//! Command-line pipeline: configuration, the steps themselves, tile
//! download and report rendering.

pub mod commands;
pub mod config;
pub mod report;
pub mod tiles;

pub use commands::Command;
pub use config::{ConfigMap, PipelineConfig};
