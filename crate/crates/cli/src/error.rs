use kfbf_core::experiment::ExperimentError;
use kfbf_core::model::{CheckpointError, ModelError};
use kfbf_core::oracle::OracleError;
use kfbf_core::sysmodel::{DatasetError, SysError};
use kfbf_core::training::TrainError;
use std::fmt;

#[derive(Debug)]
pub enum CliError {
    /// Exit code 2.
    Usage(String),
    /// Exit code 3.
    Data(String),
    /// Exit code 4.
    Contract(String),
    /// Exit code 1.
    Other(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Other(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Contract(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data format error: {m}"),
            CliError::Contract(m) => write!(f, "contract error: {m}"),
            CliError::Other(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::AntennaMismatch { .. } | ModelError::UserCount { .. } => CliError::Contract(e.to_string()),
            ModelError::Config(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<SysError> for CliError {
    fn from(e: SysError) -> Self {
        match e {
            SysError::Shape { .. } => CliError::Contract(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::Model(m) => m.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<OracleError> for CliError {
    fn from(e: OracleError) -> Self {
        match e {
            OracleError::Config(_) => CliError::Usage(e.to_string()),
            OracleError::NotSingleUser(_) => CliError::Contract(e.to_string()),
            OracleError::Cache { .. } | OracleError::Io(_) => CliError::Data(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::AntennaMismatch { .. } => CliError::Contract(e.to_string()),
            TrainError::Config(_) => CliError::Usage(e.to_string()),
            TrainError::Model(m) => m.into(),
            TrainError::Io(_) => CliError::Other(e.to_string()),
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Model(e) => e.into(),
            ExperimentError::Train(e) => e.into(),
            ExperimentError::Oracle(e) => e.into(),
            ExperimentError::Dataset(e) => e.into(),
            ExperimentError::Checkpoint(e) => e.into(),
            ExperimentError::System(e) => e.into(),
            ExperimentError::Config(m) => CliError::Usage(m),
            ExperimentError::Io(e) => CliError::Other(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(e.to_string())
    }
}
