//! Experiment driver for `percolymer`: configuration, command dispatch, result
//! files and summaries.

pub mod commands;
pub mod config;
pub mod error;
pub mod sink;
pub mod summarize;

pub use commands::{execute, render_table, run, RunOutcome};
pub use config::{Command, EventMode, RunConfig};
pub use error::CliError;
pub use sink::{ResultSink, SinkMode};

/// Thread count from `PERCOLYMER_THREADS`, if set to a positive integer.
pub fn threads_from_env() -> Option<usize> {
    std::env::var("PERCOLYMER_THREADS").ok()?.trim().parse().ok().filter(|&t| t > 0)
}
