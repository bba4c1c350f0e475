//! Library surface of the `mitoslice` CLI: configuration handling and the
//! command implementations, kept callable in-process for the test suites.

pub mod commands;
pub mod config;

pub use commands::{CliError, CliResult};
pub use config::{ExperimentConfig, Overrides};
