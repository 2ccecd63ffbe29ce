//! Batch commands over the `lhfi` engine. Every command reads its inputs,
//! writes artifacts plus a [`RunManifest`] under an output directory, and
//! reports failures through [`CliError`] exit codes.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;

pub use error::{CliError, CliResult};
pub use manifest::{RunManifest, RunStatus};
