use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate 6d rotation: {0}")]
    DegenerateRotation(String),

    #[error("not a rotation matrix: {0}")]
    NotARotation(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("mesh has no faces")]
    EmptyMesh,

    #[error("mesh is not watertight: {0}")]
    NotWatertight(String),

    #[error("bad primitive dims: {0}")]
    BadDims(String),

    #[error("surface sampling failed: {0}")]
    SamplingFailed(String),

    #[error("infeasible task: {0}")]
    InfeasibleTask(String),

    #[error("empty split: {0}")]
    EmptySplit(String),

    #[error("bad camera: {0}")]
    BadCamera(String),

    #[error("bad image shape: expected {expected}, got {got}")]
    BadImageShape { expected: String, got: String },

    #[error("t2i backend unavailable: {0}")]
    BackendUnavailable(String),

    #[error("t2i backend returned {0} images, expected 3")]
    BadResponseCount(usize),

    #[error("container format: {0}")]
    Container(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("image codec: {0}")]
    Image(#[from] image::ImageError),

    #[error("{0}")]
    Msg(String),
}

impl Error {
    pub fn msg(m: impl Into<String>) -> Self {
        Self::Msg(m.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
