//! The `pg2` command-line tool.

pub mod args;
mod commands;
pub mod error;
pub mod format;
pub mod report;

pub use args::Cli;
pub use commands::run;
pub use error::{CliError, Result};
