use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: malformed record: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: embedding has length {found}, stream declares {expected}")]
    Schema {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("line {line}: frame {frame} precedes frame {previous}")]
    Ordering {
        line: usize,
        frame: u64,
        previous: u64,
    },

    #[error("detection {index} has a zero-norm embedding")]
    DegenerateEmbedding { index: usize },

    #[error("cluster state: {0}")]
    State(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("need at least {required} points, got {found}")]
    InsufficientData { required: usize, found: usize },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("no image for frame {0}")]
    MissingFrame(u64),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("infeasible scenario: {0}")]
    Spec(String),

    #[error("{path}: {source}")]
    File {
        path: std::path::PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("[{stage}] {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Tag with the pipeline stage it came from (kept if already tagged).
    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    /// The untagged error underneath any stage tags.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }

    pub fn file(path: impl Into<std::path::PathBuf>, source: io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }
}
