//! Command-line front end: configuration, file formats and subcommands.

pub mod commands;
pub mod config;
pub mod error;
pub mod files;
pub mod plot;

pub use config::RunConfig;
pub use error::{CliError, CliResult};
