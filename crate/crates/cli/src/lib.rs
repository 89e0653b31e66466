//! Command-line orchestration of the traffic-grade pipeline.

pub mod config;
pub mod error;
pub mod pipeline;

pub use config::RunConfig;
pub use error::CliError;
pub use pipeline::{Outcome, Pipeline, Prepared, Scored};
