use thiserror::Error;

#[derive(Debug, Error)]
pub enum LidarError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("ingestion failed: {0}")]
    Ingest(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = LidarError> = std::result::Result<T, E>;
