//! Command-line pipeline: synthetic corpus, training, conversion, mapping,
//! simulation, calibration, architecture search and device reports.

pub mod commands;
pub mod config;
pub mod error;

pub use commands::execute;
pub use config::{Cli, CommandKind, RunConfig};
pub use error::{CliError, CliResult};
