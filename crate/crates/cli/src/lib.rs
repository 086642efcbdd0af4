//! Command-line tooling around `mlt-core`: corpus generation, format
//! conversion, size comparison and decode/filter benchmarks.

pub mod commands;
pub mod corpus;
pub mod report;

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {message}", path.display())]
    Input { path: PathBuf, message: String },
    #[error("{0}")]
    Usage(String),
    #[error("correctness failure: {0}")]
    Correctness(String),
}

impl CliError {
    /// 1 for correctness failures, 2 for usage, IO and unreadable input.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Correctness(_) => 1,
            _ => 2,
        }
    }
}
