//! Library side of the `smoothsnn` command: config parsing, data sourcing
//! and the three subcommands.

pub mod commands;
pub mod config;
pub mod error;

pub use commands::{load_data, run, Command, Options};
pub use config::RunConfig;
pub use error::CliError;
