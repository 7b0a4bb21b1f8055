use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid bounding box: {0}")]
    InvalidBox(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("frame {frame}: dimensions {got_w}x{got_h} do not match {want_w}x{want_h}")]
    DimensionMismatch {
        frame: String,
        got_w: u32,
        got_h: u32,
        want_w: u32,
        want_h: u32,
    },

    #[error("no foreground mask for frame {0}")]
    MissingMask(u32),

    #[error("degenerate mean score {0}: detector produced no confident output")]
    DegenerateScore(f64),

    #[error("all weights are zero: no usable target samples")]
    AllZeroWeights,

    #[error("weights are not normalized (sum = {0})")]
    Unnormalized(f64),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("detector worker: {message}{}", stderr_suffix(.stderr_tail))]
    Worker {
        message: String,
        stderr_tail: String,
    },

    #[error("iteration {iteration}: {source}")]
    Iteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

fn stderr_suffix(tail: &str) -> String {
    if tail.is_empty() {
        String::new()
    } else {
        format!("\n--- worker stderr (tail) ---\n{tail}")
    }
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn worker(message: impl Into<String>) -> Self {
        Error::Worker {
            message: message.into(),
            stderr_tail: String::new(),
        }
    }

    pub(crate) fn at_iteration(self, iteration: usize) -> Self {
        Error::Iteration {
            iteration,
            source: Box::new(self),
        }
    }
}
