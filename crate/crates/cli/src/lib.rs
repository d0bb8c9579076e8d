//! Command-line front end: file ingestion, simulation configs and the
//! `assess`, `simulate`, `approx` and `reference` commands.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;

pub use commands::{run, run_args, Cli};
pub use error::{CliError, Result};
