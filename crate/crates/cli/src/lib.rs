//! Library side of the `roboclip` binary: run configuration, subcommands
//! and the run manifest.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;

pub use config::RunConfig;
pub use error::CliError;
pub use manifest::Manifest;
