use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("integration blew up at step {step}")]
    BlowUp { step: usize },

    #[error("grid size {0} is not a power of two")]
    GridNotPowerOfTwo(usize),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("ridge solve failed (condition estimate {condition:e})")]
    SolveFailed { condition: f64 },

    #[error("closed-loop prediction diverged at step {step}")]
    Diverged { step: usize },

    #[error("an update schedule was given without truth data")]
    MissingTruth,

    #[error("model has no trained readout")]
    NotTrained,

    #[error("adjacency spectral radius {0:e} is too small to rescale")]
    DegenerateNetwork(f64),

    #[error("malformed data: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
