//! Command-line front end: run configuration, subcommands and exit codes.

pub mod commands;
pub mod config;
pub mod error;
pub mod overrides;

pub use config::RunConfig;
pub use error::CliError;
