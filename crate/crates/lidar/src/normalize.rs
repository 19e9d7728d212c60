//! Metric distance ↔ normalized inverse depth.

use crate::error::{LidarError, Result};

/// Normalized value of the farthest representable distance. Dropped pixels
/// carry this value.
pub const DROP_VALUE: f32 = -1.0;

/// Affine map of `1/d` onto `[-1, 1]`, with `1/x_min ↦ +1` and `1/x_max ↦ -1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormalizationSpec {
    pub x_min_m: f32,
    pub x_max_m: f32,
}

impl Default for NormalizationSpec {
    fn default() -> Self {
        Self {
            x_min_m: 0.9,
            x_max_m: 120.0,
        }
    }
}

impl NormalizationSpec {
    pub fn new(x_min_m: f32, x_max_m: f32) -> Result<Self> {
        if !(x_min_m > 0.0 && x_min_m < x_max_m && x_max_m.is_finite()) {
            return Err(LidarError::Config(format!(
                "distance range needs 0 < x_min < x_max, got ({x_min_m}, {x_max_m})"
            )));
        }
        Ok(Self { x_min_m, x_max_m })
    }

    /// `(1/x_max, 1/x_min)`.
    pub fn inverse_range(&self) -> (f64, f64) {
        (1.0 / self.x_max_m as f64, 1.0 / self.x_min_m as f64)
    }

    pub fn span_m(&self) -> f32 {
        self.x_max_m - self.x_min_m
    }

    /// Out-of-range distances clamp to the nearest bound with a warning.
    pub fn normalize(&self, d_m: f32) -> f32 {
        let d = if d_m < self.x_min_m || d_m > self.x_max_m || d_m.is_nan() {
            let c = if d_m.is_nan() { self.x_max_m } else { d_m.clamp(self.x_min_m, self.x_max_m) };
            log::warn!("distance {d_m} m outside [{}, {}], clamped to {c}", self.x_min_m, self.x_max_m);
            c
        } else {
            d_m
        };
        let (lo, hi) = self.inverse_range();
        let v = 2.0 * (1.0 / d as f64 - lo) / (hi - lo) - 1.0;
        v.clamp(-1.0, 1.0) as f32
    }

    pub fn denormalize(&self, v: f32) -> f32 {
        let (lo, hi) = self.inverse_range();
        let inv = (v.clamp(-1.0, 1.0) as f64 + 1.0) * 0.5 * (hi - lo) + lo;
        (1.0 / inv) as f32
    }
}
