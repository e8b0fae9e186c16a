use std::path::Path;

use ecgppg::delineate::DelineateError;
use ecgppg::events::EventsError;
use ecgppg::ingest::IngestError;
use ecgppg::monitor::MonitorError;
use ecgppg::synth::SynthError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Unreadable or invalid input: files, manifests, traces, policies, flags.
    #[error("{0}")]
    Load(String),
    #[error("{0}")]
    TooShort(String),
    #[error("{0}")]
    EmptyVerdicts(String),
    #[error("{0}")]
    LengthMismatch(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Other(_) => 1,
            CliError::Load(_) => 2,
            CliError::TooShort(_) => 3,
            CliError::EmptyVerdicts(_) => 4,
            CliError::LengthMismatch(_) => 5,
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Other(format!("{}: {e}", path.display()))
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        CliError::Load(e.to_string())
    }
}

impl From<EventsError> for CliError {
    fn from(e: EventsError) -> Self {
        CliError::Load(e.to_string())
    }
}

impl From<DelineateError> for CliError {
    fn from(e: DelineateError) -> Self {
        match e {
            DelineateError::SignalTooShort { .. } => CliError::TooShort(e.to_string()),
            DelineateError::BadBand { .. } => CliError::Load(e.to_string()),
        }
    }
}

impl From<MonitorError> for CliError {
    fn from(e: MonitorError) -> Self {
        match e {
            MonitorError::EmptyVerdicts => CliError::EmptyVerdicts(e.to_string()),
            MonitorError::LengthMismatch { .. } => CliError::LengthMismatch(e.to_string()),
            MonitorError::BadPolicy(_)
            | MonitorError::TimeRegression { .. }
            | MonitorError::Json(_)
            | MonitorError::Io(_) => CliError::Load(e.to_string()),
            MonitorError::Closed => CliError::Other(e.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::BadSpec { field, reason } => {
                CliError::Load(format!("invalid --{}: {reason}", field.replace('_', "-")))
            }
            other => CliError::Other(other.to_string()),
        }
    }
}
