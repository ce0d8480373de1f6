use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("unsupported format: {0}")]
    Unsupported(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("out of bounds: {0}")]
    Bounds(String),

    #[error("label mapping error: {0}")]
    Mapping(String),

    #[error("class {class} has {available} labeled pixels, {required} requested")]
    InsufficientSamples {
        class: u16,
        available: usize,
        required: usize,
    },

    #[error("artificial labels must cover every pixel; pixel ({row}, {col}) is unlabeled")]
    Coverage { row: usize, col: usize },

    #[error("training diverged at iteration {iteration} (loss {loss})")]
    Divergence { iteration: u64, loss: f64 },

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{stage}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    /// Wraps the error with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: impl Into<String>) -> Self {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }

    /// Strips any stage wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}
