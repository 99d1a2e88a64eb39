use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid class id {id} in {context}")]
    InvalidClassId { id: u32, context: String },

    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("failed to decode {}: {reason}", .path.display())]
    Decode { path: PathBuf, reason: String },

    #[error("dataset item {case_id} is unlabeled")]
    Unlabeled { case_id: String },

    #[error("model is frozen; training would mutate its parameters")]
    Frozen,

    #[error("non-finite loss in component `{component}`")]
    NonFinite { component: String },

    #[error("ASD undefined: empty mask for class {class_id}")]
    AsdUndefined { class_id: u8 },

    #[error("missing prerequisite for {setting}: {what}")]
    MissingPrerequisite { setting: String, what: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(expected: &[usize], actual: &[usize]) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        }
    }
}
