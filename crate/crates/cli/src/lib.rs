//! Command-line front end for `ridge-identity`: CSV ingestion, command
//! dispatch and JSON reports.

mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod report;

pub use commands::{parse_scenario, run, QUADRATURE_TOL};
pub use config::{Cli, Command, RunConfig};
pub use dataset::parse_csv;
pub use error::CliError;
pub use report::{Report, Status};
