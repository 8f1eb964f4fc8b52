//! Operator entry point for the apology-mediation service: configuration,
//! the long-running `run` command and the offline reporting commands.

pub mod config;
pub mod error;
pub mod reports;
pub mod serve;

pub use config::{BindingKind, ConfigFile, Secret};
pub use error::{exit, CliError};
