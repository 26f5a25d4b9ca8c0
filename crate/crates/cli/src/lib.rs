//! Configuration, orchestration and artifact output for the `tdmf` binary.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod experiment;
pub mod output;
pub mod presets;

pub use config::ExperimentConfig;
pub use error::CliError;
pub use experiment::{run_experiment, run_single, run_sweep, Command};
