use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    NotFound(PathBuf),
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt header: {0}")]
    CorruptHeader(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("signal too short: need at least {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("window/hop pair does not satisfy constant overlap-add")]
    NonColaConfig,
    #[error("invalid sample rate: {0}")]
    InvalidRate(u32),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("residual noise has zero energy (SNR is +inf)")]
    ZeroNoise,

    #[error("invalid SNR ladder: {0}")]
    InvalidLadder(String),
    #[error("source has zero energy: {0}")]
    SilentSource(&'static str),
    #[error("sample rate mismatch: {0} Hz vs {1} Hz")]
    RateMismatch(u32, u32),
    #[error("no usable WAV files in {0}")]
    EmptyCorpus(PathBuf),
    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("forward cache does not belong to this model state")]
    StaleCache,
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("non-finite value in tensor")]
    NonFinite,
    #[error("int32 accumulator could overflow: {0} terms of 127*127")]
    AccumulatorOverflow(usize),

    #[error("target has zero energy")]
    SilentTarget,

    #[error("no clips to benchmark")]
    EmptyInput,
    #[error("models are not architecturally identical")]
    ArchitectureMismatch,

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    /// Process exit code class: 2 for bad input data, 3 for internal invariant violations.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Invariant(_) | Error::StaleCache => 3,
            _ => 2,
        }
    }
}
