//! Configuration, file formats, parallel execution and the command-line
//! workflows on top of `robustmv-core`.

pub mod commands;
pub mod config;
pub mod error;
pub mod exec;
pub mod io;
pub mod manifest;
pub mod verify;

pub use error::{CliError, Result};
