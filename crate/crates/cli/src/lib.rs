//! Experiment runner: parses a JSON config, evaluates the closed forms and
//! optional Monte Carlo estimates, and writes one series file per
//! `(experiment, J)` plus a `summary.json` with oracle comparisons.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod run;

pub use config::ExperimentConfig;
pub use run::{run, run_file, RunOptions, Status, Summary};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),

    #[error(transparent)]
    Core(#[from] noisy_chaos::Error),
}
