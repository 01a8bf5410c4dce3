//! Experiment driver: configs, run directories and the subcommand bodies
//! behind the `groklab` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod matrix;
pub mod run;

pub use config::{ExperimentConfig, Scale, Task};
pub use error::{CliError, Result};
