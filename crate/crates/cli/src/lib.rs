//! Batch driver for the MGMT radiogenomic pipeline: configuration, cohort
//! splits, the preprocessing cache and the stages behind the `mgmt`
//! subcommands.

pub mod cache;
pub mod config;
pub mod io;
pub mod pipeline;
pub mod pool;
pub mod split;
pub mod synth;

pub use config::PipelineConfig;
pub use pipeline::{CliError, CliResult, StageSummary};
