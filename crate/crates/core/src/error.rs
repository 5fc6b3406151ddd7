use std::path::PathBuf;

use thiserror::Error;

use crate::graph::GraphError;
use crate::schemes::SchemeId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("tensor of shape {shape:?} cannot hold {len} values")]
    BadShape { shape: Vec<usize>, len: usize },

    #[error("{0}: non-finite value")]
    NonFinite(&'static str),

    #[error("{0}: empty tensor")]
    EmptyTensor(&'static str),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("bitwidth {bits} outside the supported range of {scheme}")]
    InvalidBitwidth { scheme: SchemeId, bits: f32 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("temperature must be positive, got {0}")]
    InvalidTemperature(f32),

    #[error("epoch {epoch} beyond the schedule's {total} epochs")]
    EpochOutOfSchedule { epoch: u32, total: u32 },

    #[error(transparent)]
    Graph(#[from] GraphError),

    #[error("{what}, line {line}: {msg}")]
    Parse {
        what: &'static str,
        line: usize,
        msg: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("loss became non-finite during {stage} epoch {epoch}")]
    NonFiniteLoss { stage: &'static str, epoch: u32 },

    #[error("{0}")]
    Runtime(String),
}

impl Error {
    pub(crate) fn parse(what: &'static str, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            what,
            line,
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Errors caused by bad user input rather than a failure while running.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::NonFiniteLoss { .. } | Error::Runtime(_))
    }
}
