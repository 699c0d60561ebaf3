//! Batch front end for the `srgeo` solvers: reads TOML run specifications,
//! runs continuation or drift solves and writes plot-ready tables.

pub mod config;
pub mod output;
pub mod run;

use std::path::PathBuf;

pub use config::{parse, Resolved, RunSpec};
pub use run::{diagnose, drift_solve, list_problems, solve, Outcome};

/// Environment variable naming the root under which runs without an explicit
/// output directory are written.
pub const OUTPUT_ROOT_ENV: &str = "SRGEO_OUTPUT_ROOT";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed results: {0}")]
    Results(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Results(_) => 2,
            CliError::Io { .. } => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }
}
