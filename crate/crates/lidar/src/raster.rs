use crate::error::{LidarError, Result};
use crate::normalize::{NormalizationSpec, DROP_VALUE};

/// H×W grid of normalized inverse depth. Pixels equal to `drop_value` are
/// unmeasured.
#[derive(Clone, Debug, PartialEq)]
pub struct RasterMap {
    height: usize,
    width: usize,
    values: Vec<f32>,
    drop_value: f32,
    norm: NormalizationSpec,
}

impl RasterMap {
    pub fn new(height: usize, width: usize, values: Vec<f32>, norm: NormalizationSpec) -> Result<Self> {
        Self::with_drop_value(height, width, values, DROP_VALUE, norm)
    }

    pub fn with_drop_value(
        height: usize,
        width: usize,
        values: Vec<f32>,
        drop_value: f32,
        norm: NormalizationSpec,
    ) -> Result<Self> {
        if height == 0 || width == 0 || values.len() != height * width {
            return Err(LidarError::Shape(format!(
                "{height}x{width} raster needs {} values, got {}",
                height * width,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(LidarError::Config(format!("raster value {v} outside [-1, 1]")));
        }
        if !(-1.0..=1.0).contains(&drop_value) {
            return Err(LidarError::Config(format!("drop value {drop_value} outside [-1, 1]")));
        }
        Ok(Self {
            height,
            width,
            values,
            drop_value,
            norm,
        })
    }

    /// Raster with every pixel dropped.
    pub fn dropped(height: usize, width: usize, norm: NormalizationSpec) -> Self {
        Self {
            height,
            width,
            values: vec![DROP_VALUE; height * width],
            drop_value: DROP_VALUE,
            norm,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn drop_value(&self) -> f32 {
        self.drop_value
    }

    pub fn norm(&self) -> &NormalizationSpec {
        &self.norm
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.width + col]
    }

    pub fn is_measured(&self, idx: usize) -> bool {
        self.values[idx] != self.drop_value
    }

    /// 1 where measured, 0 where the pixel equals the drop value.
    pub fn drop_indicator(&self) -> DropIndicator {
        DropIndicator {
            height: self.height,
            width: self.width,
            measured: self.values.iter().map(|&v| v != self.drop_value).collect(),
        }
    }

    pub fn measured_count(&self) -> usize {
        self.values.iter().filter(|&&v| v != self.drop_value).count()
    }

    pub fn drop_rate(&self) -> f64 {
        1.0 - self.measured_count() as f64 / self.values.len() as f64
    }

    /// Metric depth per pixel; `None` where dropped.
    pub fn depths_m(&self) -> Vec<Option<f32>> {
        self.values
            .iter()
            .map(|&v| (v != self.drop_value).then(|| self.norm.denormalize(v)))
            .collect()
    }

    /// Replaces values, keeping shape and metadata. Values are clamped into
    /// `[-1, 1]`.
    pub fn with_values(&self, values: Vec<f32>) -> Result<Self> {
        if values.len() != self.values.len() {
            return Err(LidarError::Shape(format!(
                "expected {} values, got {}",
                self.values.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(LidarError::Config("raster values must not be NaN".into()));
        }
        Ok(Self {
            values: values.into_iter().map(|v| v.clamp(-1.0, 1.0)).collect(),
            ..self.clone()
        })
    }
}

/// Binary H×W grid, `true` = measured.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DropIndicator {
    pub height: usize,
    pub width: usize,
    pub measured: Vec<bool>,
}

impl DropIndicator {
    pub fn dropped_count(&self) -> usize {
        self.measured.iter().filter(|&&m| !m).count()
    }

    /// True when every pixel dropped here is also dropped in `other`.
    pub fn drops_subset_of(&self, other: &DropIndicator) -> bool {
        self.measured.len() == other.measured.len()
            && self.measured.iter().zip(&other.measured).all(|(&a, &b)| a || !b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indicator_marks_exact_drop_value() {
        let r = RasterMap::new(1, 4, vec![0.5, -1.0, -0.999, -1.0], NormalizationSpec::default()).unwrap();
        assert_eq!(r.drop_indicator().measured, vec![true, false, true, false]);
        assert_eq!(r.measured_count(), 2);
        assert_eq!(r.drop_rate(), 0.5);
    }

    #[test]
    fn out_of_range_values_are_rejected() {
        let n = NormalizationSpec::default();
        assert!(RasterMap::new(1, 2, vec![0.0, 1.5], n).is_err());
        assert!(RasterMap::new(1, 2, vec![0.0, f32::NAN], n).is_err());
        assert!(RasterMap::new(2, 2, vec![0.0; 3], n).is_err());
    }
}
