use thiserror::Error;

use cvf_core::bench::BenchError;
use cvf_core::dynsys::DynError;
use cvf_core::io::IoError;
use cvf_core::learner::LearnError;

/// Exit code for bad input: unreadable files, parse failures, invalid
/// configuration, schema mismatches.
pub const EXIT_INPUT: i32 = 2;
/// Exit code for a fit that ended without a certified optimum.
pub const EXIT_SOLVER: i32 = 3;
pub const EXIT_OTHER: i32 = 1;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("fit failed: {0}")]
    Solver(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) | CliError::Config(_) => EXIT_INPUT,
            CliError::Solver(_) => EXIT_SOLVER,
            CliError::Other(_) => EXIT_OTHER,
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<LearnError> for CliError {
    fn from(e: LearnError) -> Self {
        match e {
            LearnError::Infeasible { .. }
            | LearnError::NotOptimal { .. }
            | LearnError::CertificateRejected { .. } => CliError::Solver(e.to_string()),
            LearnError::Conic(_) | LearnError::Sos(_) => CliError::Other(e.to_string()),
            LearnError::InvalidConfig(m) => CliError::Config(m),
            LearnError::InvalidMetric(_) => CliError::Config(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<BenchError> for CliError {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::InvalidConfig(_) => CliError::Config(e.to_string()),
            BenchError::Dyn(_) => CliError::Other(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<DynError> for CliError {
    fn from(e: DynError) -> Self {
        match e {
            DynError::InvalidObstacles(_) | DynError::InvalidOptions(_) => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Other(e.to_string()),
        }
    }
}

pub(crate) fn write_failed(path: &std::path::Path, e: std::io::Error) -> CliError {
    CliError::Other(format!("{}: {e}", path.display()))
}
