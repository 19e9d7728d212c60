use dusty_gan::GanError;
use dusty_lidar::LidarError;
use dusty_metrics::MetricError;
use dusty_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum InversionError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("target has no measured pixels")]
    NoMeasurements,
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Lidar(#[from] LidarError),
    #[error(transparent)]
    Gan(#[from] GanError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

pub type Result<T, E = InversionError> = std::result::Result<T, E>;
