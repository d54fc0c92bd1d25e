use std::io;
use std::path::Path;

use cryptoid_core::dcnn::{CheckpointError, DcnnError};
use cryptoid_core::synth::DatasetError;

/// Every failure maps onto one of three exit codes.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }

    pub fn io(path: &Path, e: io::Error) -> CliError {
        CliError::Data(format!("{}: {e}", path.display()))
    }
}

impl From<DcnnError> for CliError {
    fn from(e: DcnnError) -> Self {
        match e {
            DcnnError::Config(_) | DcnnError::EmptySpace | DcnnError::EmptySplit(_) => CliError::Usage(e.to_string()),
            DcnnError::Diverged { .. } | DcnnError::NoViableTrial => CliError::Numeric(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Data(format!("checkpoint: {e}"))
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::NoClasses | DatasetError::TooFew { .. } => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}
