use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("empty input: {0}")]
    Empty(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Lidar(#[from] dusty_lidar::LidarError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = MetricError> = std::result::Result<T, E>;
