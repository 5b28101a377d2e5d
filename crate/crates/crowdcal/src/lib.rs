//! File formats, configuration and command drivers around `crowdcal-core`.
//!
//! Everything here touches the file system or the clock; the algorithms
//! live in the core crate. The `crowdcal` binary is a thin shell over
//! [`commands`].

use std::path::PathBuf;

use crowdcal_core::metrics::MetricsError;
use crowdcal_core::pipeline::PipelineError;
use crowdcal_core::synth::SynthError;
use crowdcal_core::track::TrackError;
use thiserror::Error;

pub mod commands;
pub mod config;
pub mod formats;

pub use commands::calibrate_parallel;
pub use config::AppConfig;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Track(#[from] TrackError),
}

impl Error {
    /// Process exit code: 2 for anything the user can fix in the inputs,
    /// 3 when the solver itself gave up.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Pipeline(PipelineError::InvalidInput(_)) => 2,
            Error::Pipeline(_) => 3,
            _ => 2,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
