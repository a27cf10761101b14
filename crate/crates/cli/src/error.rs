//! Command failures and their process exit codes.

use camscope::backbones::ModelError;
use camscope::cam::CamError;
use camscope::dataset::DatasetError;
use camscope::reporting::ReportError;
use camscope::training::TrainError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad arguments.
    #[error("{0}")]
    Usage(String),
    /// Invalid or unreadable configuration.
    #[error("config error: {0}")]
    Config(String),
    /// Training aborted.
    #[error("training failed: {0}")]
    Training(String),
    /// Checkpoint, run directory or dataset does not match what is expected.
    #[error("{0}")]
    Mismatch(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Training(_) => 3,
            CliError::Mismatch(_) => 4,
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::MissingRoot(_) | DatasetError::InvalidFractions(_) | DatasetError::InvalidSynthetic(_) => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Mismatch(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::UnknownArchitecture { .. }
            | ModelError::UnknownLayer { .. }
            | ModelError::TargetOutOfRange { .. }
            | ModelError::TooFewClasses(_)
            | ModelError::InputTooSmall { .. } => CliError::Usage(e.to_string()),
            _ => CliError::Mismatch(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) => CliError::Config(e.to_string()),
            TrainError::ClassCount { .. } | TrainError::RegistryMismatch { .. } => CliError::Mismatch(e.to_string()),
            TrainError::Dataset(d) => d.into(),
            TrainError::Model(m) => m.into(),
            TrainError::EmptySplit(_) | TrainError::NonFiniteLoss { .. } | TrainError::Preprocess(_) => {
                CliError::Training(e.to_string())
            }
        }
    }
}

impl From<CamError> for CliError {
    fn from(e: CamError) -> Self {
        match e {
            CamError::Model(m) => m.into(),
            CamError::UnknownMethod(_) | CamError::Alpha(_) | CamError::Batch => CliError::Usage(e.to_string()),
            _ => CliError::Mismatch(e.to_string()),
        }
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        match e {
            ReportError::NoArtifacts(_) => CliError::Usage(e.to_string()),
            _ => CliError::Mismatch(e.to_string()),
        }
    }
}
