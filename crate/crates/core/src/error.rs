use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("bounds error: {0}")]
    Bounds(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("control error: {0}")]
    Control(String),

    #[error("integration error at t={time:.3} s, node {node}: {reason}")]
    Integration {
        time: f64,
        node: String,
        reason: String,
    },

    #[error("label error for {arch_key} (scenario {scenario_id}): {reason}")]
    Label {
        arch_key: String,
        scenario_id: u64,
        reason: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("model corrupt: {0}")]
    ModelCorrupt(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("undefined kendall tau: {0}")]
    UndefinedTau(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("undefined R^2: {0}")]
    UndefinedR2(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag used on the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Bounds(_) => "bounds",
            Error::Shape(_) => "shape",
            Error::Control(_) => "control",
            Error::Integration { .. } => "integration",
            Error::Label { .. } => "label",
            Error::Config(_) => "config",
            Error::Parse(_) => "parse",
            Error::ModelCorrupt(_) => "model_corrupt",
            Error::Checkpoint(_) => "checkpoint",
            Error::UndefinedTau(_) => "undefined_tau",
            Error::Domain(_) => "domain",
            Error::UndefinedR2(_) => "undefined_r2",
            Error::Io { .. } => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
