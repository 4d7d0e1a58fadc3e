use std::io;
use std::path::PathBuf;

use dtchain::scenario::ScenarioError;
use dtchain::sim::SimError;
use thiserror::Error;

/// Exit status for input that failed validation.
pub const EXIT_VALIDATION: i32 = 2;
/// Exit status for failures after validation passed.
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{origin}: {source}")]
    Scenario { origin: String, source: ScenarioError },
    #[error("{origin}: line {line}: {msg}")]
    Spec { origin: String, line: usize, msg: String },
    #[error("{0}")]
    Invalid(String),
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: io::Error },
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: io::Error },
    #[error("simulation failed: {0}")]
    Sim(#[from] SimError),
    #[error("{0}")]
    Mismatch(String),
    #[error("sweep point {param}={value} seed {seed}: {source}")]
    Point { param: String, value: String, seed: u64, source: Box<CliError> },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Scenario { .. } | CliError::Spec { .. } | CliError::Invalid(_) | CliError::Read { .. } => {
                EXIT_VALIDATION
            }
            CliError::Point { source, .. } => source.exit_code(),
            CliError::Write { .. } | CliError::Sim(_) | CliError::Mismatch(_) => EXIT_RUNTIME,
        }
    }
}
