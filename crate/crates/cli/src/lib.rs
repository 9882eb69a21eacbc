//! Command-line driver for the physfactor toolkit.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod report;

pub use args::Cli;
pub use commands::run;
pub use config::RunConfig;
pub use error::{CliError, CliResult};
