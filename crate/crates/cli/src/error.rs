use cortexdec_core::data::DataError;
use cortexdec_core::model::ModelError;
use cortexdec_core::signal::SignalError;
use cortexdec_core::training::TrainError;
use thiserror::Error;

/// Exit code 2 for usage and configuration mistakes, 1 for everything that
/// goes wrong while running.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) => 2,
            Self::Runtime(_) => 1,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Runtime(format!("io: {e}"))
    }
}

impl From<SignalError> for CliError {
    fn from(e: SignalError) -> Self {
        match e {
            SignalError::InvalidParameter { .. }
            | SignalError::UnknownChannel(_)
            | SignalError::Config { .. } => Self::Config(e.to_string()),
            _ => Self::Runtime(e.to_string()),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Config(_) => Self::Config(e.to_string()),
            DataError::Signal(s) => s.into(),
            _ => Self::Runtime(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(_) => Self::Config(e.to_string()),
            _ => Self::Runtime(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) => Self::Config(e.to_string()),
            TrainError::Model(m) => m.into(),
            _ => Self::Runtime(e.to_string()),
        }
    }
}
