//! Experiment plumbing for the `imoca` binary: spec parsing, batch runs,
//! summaries and the oracle self-test.

pub mod run;
pub mod selftest;
pub mod spec;
pub mod summarize;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("aggregation error: {0}")]
    Aggregation(String),

    #[error("i/o error: {0}")]
    Io(String),

    #[error("{} run(s) failed", .0.len())]
    RunsFailed(Vec<String>),
}

impl CliError {
    /// 2 for configuration problems, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }
}
