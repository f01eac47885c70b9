//! Scenario runner for the `qdsource` command-line tool: config parsing,
//! the simulate → detect → correlate → fit → correct pipeline, time-tag
//! files and report artifacts.

pub mod artifacts;
pub mod config;
pub mod manifest;
pub mod pipeline;
pub mod scenario;
pub mod timetag;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use config::{ConfigError, ConfigFile};
pub use manifest::RunManifest;
pub use scenario::Scenario;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error("{stage} failed: {message}")]
    Stage { stage: &'static str, message: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{stage}: fit did not converge ({detail})")]
    NotConverged { stage: &'static str, detail: String },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn stage(stage: &'static str, err: impl std::fmt::Display) -> Self {
        Self::Stage {
            stage,
            message: err.to_string(),
        }
    }

    /// 2 config error, 3 pipeline error, 4 fit non-convergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Stage { .. } | Self::Io { .. } => 3,
            Self::NotConverged { .. } => 4,
        }
    }
}
