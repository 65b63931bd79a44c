use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("embedding width mismatch: got {got}, want {want}")]
    WidthMismatch { got: usize, want: usize },
    #[error("layer {0} not materialized (encoder depth or requested set)")]
    LayerMissing(usize),
    #[error("encoder depth {got} below the minimum {min}")]
    DepthTooSmall { got: usize, min: usize },
    #[error("token span does not recover the annotation: {0}")]
    TokenizationMismatch(String),
    #[error("bad diffusion step count {0}")]
    BadT(usize),
    #[error("sequence {0} has no rendered reference images")]
    MissingReferenceImages(String),
    #[error("frozen extractor changed: {0}")]
    FrozenViolation(String),
    #[error("corpus has {got} pairs, need at least {need}")]
    CorpusTooSmall { got: usize, need: usize },
    #[error("need at least {need} pairs for retrieval, got {got}")]
    TooFewPairs { got: usize, need: usize },
    #[error("sequence lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("covariance could not be stabilized: {0}")]
    DegenerateCovariance(String),
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
    #[error(transparent)]
    Core(#[from] vihoi_core::Error),
    #[error(transparent)]
    Candle(#[from] candle_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Msg(String),
}

pub type Result<T> = std::result::Result<T, Error>;
