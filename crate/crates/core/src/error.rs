use thiserror::Error;

/// Unified error type for the retrieval pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or inconsistent on-disk data (sidecars, manifests, CSVs).
    #[error("format error: {0}")]
    Format(String),
    /// Semantically invalid data (non-finite values, fully masked regions).
    #[error("data error: {0}")]
    Data(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("calibration error: {0}")]
    Calib(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("segmentation error: {0}")]
    Segmentation(String),
    #[error("feature error: {0}")]
    Feature(String),
    #[error("model error: {0}")]
    Model(String),
    #[error("score error: {0}")]
    Score(String),
    #[error("simulation error: {0}")]
    Sim(String),
}

pub type Result<T> = std::result::Result<T, Error>;
