//! Command-line front end for fitting and using transport-map density models.

pub mod commands;
pub mod document;
mod error;

pub use commands::{run, Cli};
pub use document::{LoadedMap, MapDocument};
pub use error::{CliError, CliResult};
