//! Command implementations behind the `moetrack` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod train;

pub use config::RunConfig;
pub use error::CliError;
