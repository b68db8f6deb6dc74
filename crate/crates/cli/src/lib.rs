//! Library side of the `owsc` command: every subcommand as a function, so
//! the binary stays a thin argument parser.

pub mod bench;
pub mod commands;
pub mod error;
pub mod manifest;

pub use error::{CliError, CliResult, EXIT_CONFIG, EXIT_IO, EXIT_NON_FINITE, EXIT_OK};
