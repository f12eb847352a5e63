//! Command line, streaming CSV ingestion and the simulation harness built
//! on [`sos_core`].

pub mod commands;
pub mod csv_data;
pub mod error;
pub mod generate;
pub mod parallel;
pub mod report;
pub mod runner;
pub mod scenario;

pub use error::{exit, CliError, Result};
