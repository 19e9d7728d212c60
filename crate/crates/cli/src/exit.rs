//! Process exit codes.

use dusty_gan::GanError;
use dusty_inversion::InversionError;
use dusty_lidar::LidarError;
use dusty_metrics::MetricError;
use dusty_tensor::TensorError;

pub const OK: i32 = 0;
pub const FAILURE: i32 = 1;
pub const CONFIG: i32 = 2;
pub const NUMERIC: i32 = 3;
pub const IO: i32 = 4;

/// Invalid arguments or settings detected by the command layer.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "invalid configuration: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn tensor(e: &TensorError) -> i32 {
    match e {
        TensorError::NonFinite { .. } => NUMERIC,
        TensorError::Io(_) | TensorError::Format(_) => IO,
        TensorError::Config(_) | TensorError::Shape { .. } => CONFIG,
        _ => FAILURE,
    }
}

fn lidar(e: &LidarError) -> i32 {
    match e {
        LidarError::Io(_) | LidarError::Format(_) => IO,
        LidarError::Config(_) | LidarError::Shape(_) => CONFIG,
        LidarError::Ingest(_) => FAILURE,
    }
}

fn metric(e: &MetricError) -> i32 {
    match e {
        MetricError::Lidar(l) => lidar(l),
        MetricError::Json(_) | MetricError::Csv(_) => IO,
        MetricError::Config(_) | MetricError::Shape(_) | MetricError::Empty(_) => CONFIG,
    }
}

fn gan(e: &GanError) -> i32 {
    match e {
        GanError::NonFinite { .. } => NUMERIC,
        GanError::Tensor(t) => tensor(t),
        GanError::Lidar(l) => lidar(l),
        GanError::Config(_) | GanError::Shape(_) => CONFIG,
        GanError::Json(_) | GanError::Csv(_) | GanError::Image(_) | GanError::Io(_) => IO,
    }
}

fn inversion(e: &InversionError) -> i32 {
    match e {
        InversionError::Tensor(t) => tensor(t),
        InversionError::Lidar(l) => lidar(l),
        InversionError::Gan(g) => gan(g),
        InversionError::Metric(m) => metric(m),
        InversionError::Config(_) | InversionError::Shape(_) | InversionError::NoMeasurements => CONFIG,
    }
}

/// Maps the first recognised error in the chain to an exit code.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() || cause.is::<clap::Error>() {
            return CONFIG;
        }
        if let Some(e) = cause.downcast_ref::<GanError>() {
            return gan(e);
        }
        if let Some(e) = cause.downcast_ref::<InversionError>() {
            return inversion(e);
        }
        if let Some(e) = cause.downcast_ref::<TensorError>() {
            return tensor(e);
        }
        if let Some(e) = cause.downcast_ref::<LidarError>() {
            return lidar(e);
        }
        if let Some(e) = cause.downcast_ref::<MetricError>() {
            return metric(e);
        }
        if cause.is::<std::io::Error>() || cause.is::<serde_json::Error>() {
            return IO;
        }
    }
    FAILURE
}

#[cfg(test)]
mod tests {
    use super::*;
    use anyhow::Context;

    #[test]
    fn codes_follow_the_root_cause() {
        let nan = anyhow::Error::from(GanError::Tensor(TensorError::NonFinite { op: "add" }));
        assert_eq!(exit_code(&nan), NUMERIC);
        let cfg: anyhow::Result<()> = Err(GanError::Config("x".into())).context("loading config");
        assert_eq!(exit_code(&cfg.unwrap_err()), CONFIG);
        let io = anyhow::Error::from(std::io::Error::new(std::io::ErrorKind::NotFound, "gone")).context("reading");
        assert_eq!(exit_code(&io), IO);
        let inv = anyhow::Error::from(InversionError::Gan(GanError::Lidar(LidarError::Format("bad".into()))));
        assert_eq!(exit_code(&inv), IO);
        assert_eq!(exit_code(&anyhow::anyhow!("other")), FAILURE);
    }
}
