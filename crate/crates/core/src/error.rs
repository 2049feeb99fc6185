use std::path::PathBuf;

use thiserror::Error;

use crate::ann::ModelFileError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid converter parameters: {0}")]
    InvalidParams(String),
    #[error("invalid load schedule: {0}")]
    InvalidSchedule(String),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("non-finite converter state (i_l = {i_l}, v_c = {v_c})")]
    NonFiniteState { i_l: f64, v_c: f64 },
    #[error("simulation diverged at t = {t} s: {source}")]
    Diverged {
        t: f64,
        #[source]
        source: Box<Error>,
    },
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("training failed: {0}")]
    Training(String),
    #[error("{0}")]
    Unsupported(String),
    #[error("model file: {0}")]
    Model(#[from] ModelFileError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
