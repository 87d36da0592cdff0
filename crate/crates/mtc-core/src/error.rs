use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("boundary face index {index} out of range (scenario has {count} faces)")]
    FaceIndexOutOfRange { index: usize, count: usize },

    #[error("point {point:?} does not lie on boundary face {face} (distance {distance:.3e})")]
    PointOffFace {
        face: usize,
        point: [f64; 2],
        distance: f64,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value encountered in {context}")]
    NonFinite { context: String },

    #[error("explicit scheme unstable: {0}")]
    Stability(String),

    #[error("training diverged: loss stayed above {factor}x its initial value for {patience} consecutive iterations (iteration {iteration})")]
    Diverged {
        factor: f64,
        patience: usize,
        iteration: usize,
    },

    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn parse(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
