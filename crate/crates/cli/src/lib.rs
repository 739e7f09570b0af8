//! Command-line driver for the training pipeline: configuration, the
//! ingest / train / infer / eval workflow, and the shortlist-size sweep.

pub mod commands;
pub mod config;
pub mod error;

pub use commands::{run, Command};
pub use config::{ConfigError, RunConfig};
pub use error::CliError;
