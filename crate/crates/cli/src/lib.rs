//! Command-line surface for the `causalmex` estimators: run configuration
//! (flags over an optional key=value config file), CSV ingestion with a
//! missing-exposure marker, synthetic dataset generation, and line-oriented
//! machine-readable reports.

pub mod config;
pub mod data;
pub mod report;
pub mod run;
pub mod synth;

pub use config::{Args, CliError, Mode, RunConfig};
pub use run::run;
