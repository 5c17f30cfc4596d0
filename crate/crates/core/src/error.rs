use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot schedule event at t={at} s: clock is already at {now} s")]
    ScheduleInPast { at: f64, now: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("duplicate feature push for agent {agent} interval {interval}")]
    DuplicateInterval { agent: u32, interval: u64 },

    #[error("training data must contain both classes")]
    SingleClass,

    #[error("training diverged at epoch {epoch}, step {step}: loss={loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error("ledger: {0}")]
    Ledger(String),

    #[error("run with seed {seed} failed: {source}")]
    RunFailed {
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
