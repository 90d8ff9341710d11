use std::path::PathBuf;

use thiserror::Error;

use crate::memory::ContextId;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("capacity exceeded: {requested} pages requested, {available} pages left in DRAM + flash")]
    Capacity { requested: u64, available: u64 },

    #[error("unknown context {0:?}")]
    UnknownContext(ContextId),

    #[error("access to torn-down context {0:?}")]
    TornDown(ContextId),

    #[error("page state violation: {0}")]
    PageState(String),

    #[error("invariant violated at t={time_us}us: {msg}")]
    Invariant { time_us: u64, msg: String },

    #[error("config key `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error("{path}:{line}: {msg}")]
    Trace { path: String, line: usize, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("sweep point {containers} ({policy}): {source}")]
    SweepPoint {
        containers: u32,
        policy: String,
        #[source]
        source: Box<SimError>,
    },

    #[error("incompatible results: {0}")]
    Mismatch(String),

    #[error("malformed results file {path}: {msg}")]
    Results { path: String, msg: String },
}

impl SimError {
    pub fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        SimError::Config { key: key.into(), msg: msg.into() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SimError::Io { path: path.into(), source }
    }

    /// True for usage/configuration problems as opposed to run aborts.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            SimError::Config { .. }
                | SimError::Trace { .. }
                | SimError::Mismatch(_)
                | SimError::Results { .. }
        )
    }
}

pub type Result<T, E = SimError> = std::result::Result<T, E>;
