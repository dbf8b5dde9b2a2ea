use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot decode image {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("missing label entry for id `{0}`")]
    MissingLabel(String),

    #[error("malformed label file {path}, line {line}: {message}")]
    LabelFile {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("size mismatch for `{id}`: image is {image_h}x{image_w}, mask is {mask_h}x{mask_w}")]
    SizeMismatch {
        id: String,
        image_h: usize,
        image_w: usize,
        mask_h: usize,
        mask_w: usize,
    },

    #[error("label/mask inconsistency for `{id}`: label {label}, mask has {fire_pixels} fire pixels")]
    LabelMaskInconsistency {
        id: String,
        label: u8,
        fire_pixels: usize,
    },

    #[error("need at least {min} samples, got {got}")]
    TooFewSamples { got: usize, min: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("weight file incompatible with backbone; mismatched tensors: {}", .0.join(", "))]
    IncompatibleWeights(Vec<String>),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
