use std::path::PathBuf;

use thiserror::Error;

use crate::data::NeedleState;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error(transparent)]
    Dataset(#[from] DatasetError),

    #[error(transparent)]
    Stream(#[from] StreamError),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss is {loss}")]
    Divergence { epoch: usize, batch: usize, loss: f64 },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("checkpoint does not match the requested model: {0}")]
    SpecMismatch(String),
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("malformed manifest at line {line}: {reason}")]
    MalformedManifest { line: usize, reason: String },

    #[error("malformed label file for clip {clip} at line {line}: {reason}")]
    MalformedLabels {
        clip: String,
        line: usize,
        reason: String,
    },

    #[error("clip {0} is listed more than once")]
    DuplicateClip(String),

    #[error("clip {clip}: illegal transition {from} -> {to} at frame {frame_index}")]
    GrammarViolation {
        clip: String,
        frame_index: usize,
        from: NeedleState,
        to: NeedleState,
    },

    #[error("clip {clip}: infiltration flag is {flag} but labels {state} an Infil frame")]
    InfiltrationFlag {
        clip: String,
        flag: bool,
        state: &'static str,
    },

    #[error("clip {clip}: frame {index} is missing ({path})")]
    MissingFrame {
        clip: String,
        index: usize,
        path: PathBuf,
    },

    #[error("could not decode image {path}: {reason}")]
    Image { path: PathBuf, reason: String },

    #[error("class {0} has no frames")]
    EmptyClass(NeedleState),
}

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("session is closed")]
    Closed,

    #[error("frame {index} is missing: {reason}")]
    MissingFrame { index: usize, reason: String },

    #[error("malformed frame header: {0}")]
    BadHeader(String),
}
