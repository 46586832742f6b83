//! Command-line pipeline driver: configuration, stages and run manifests.

pub mod cli;
pub mod config;
pub mod error;
pub mod manifest;
pub mod pipeline;

pub use cli::run;
pub use config::RunConfig;
pub use error::{CliError, Result};
