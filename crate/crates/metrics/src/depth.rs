use dusty_lidar::RasterMap;
use serde::{Deserialize, Serialize};

use crate::error::{MetricError, Result};

/// Standard monocular-depth error set over co-measured pixels, in meters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthErrorReport {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    /// Fraction with `max(p/t, t/p) < 1.25`.
    pub delta1: f64,
    /// `< 1.25²`
    pub delta2: f64,
    /// `< 1.25³`
    pub delta3: f64,
    pub count: usize,
}

/// Errors between paired positive metric depths.
pub fn depth_errors_m(pred: &[f64], target: &[f64]) -> Result<DepthErrorReport> {
    if pred.len() != target.len() {
        return Err(MetricError::Shape(format!("{} predictions for {} targets", pred.len(), target.len())));
    }
    if pred.is_empty() {
        return Err(MetricError::Empty("no co-measured pixels".into()));
    }
    if let Some(v) = pred.iter().chain(target).find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(MetricError::Config(format!("depth {v} is not positive")));
    }
    let n = pred.len() as f64;
    let mut acc = [0.0f64; 7];
    for (&p, &t) in pred.iter().zip(target) {
        let e = p - t;
        acc[0] += e.abs() / t;
        acc[1] += e * e / t;
        acc[2] += e * e;
        acc[3] += (p.ln() - t.ln()).powi(2);
        let ratio = (p / t).max(t / p);
        acc[4] += (ratio < 1.25) as u8 as f64;
        acc[5] += (ratio < 1.25 * 1.25) as u8 as f64;
        acc[6] += (ratio < 1.25 * 1.25 * 1.25) as u8 as f64;
    }
    Ok(DepthErrorReport {
        abs_rel: acc[0] / n,
        sq_rel: acc[1] / n,
        rmse: (acc[2] / n).sqrt(),
        rmse_log: (acc[3] / n).sqrt(),
        delta1: acc[4] / n,
        delta2: acc[5] / n,
        delta3: acc[6] / n,
        count: pred.len(),
    })
}

/// Errors over pixels measured in both rasters, after converting each to
/// metric depth with its own normalization.
pub fn depth_errors(pred: &RasterMap, target: &RasterMap) -> Result<DepthErrorReport> {
    if pred.shape() != target.shape() {
        return Err(MetricError::Shape(format!("{:?} vs {:?}", pred.shape(), target.shape())));
    }
    let (mut p, mut t) = (Vec::new(), Vec::new());
    for (a, b) in pred.depths_m().into_iter().zip(target.depths_m()) {
        if let (Some(a), Some(b)) = (a, b) {
            p.push(a as f64);
            t.push(b as f64);
        }
    }
    depth_errors_m(&p, &t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use dusty_lidar::NormalizationSpec;

    #[test]
    fn identity_is_perfect() {
        let d = [1.0, 5.0, 40.0];
        let r = depth_errors_m(&d, &d).unwrap();
        assert_eq!((r.abs_rel, r.sq_rel, r.rmse, r.rmse_log), (0.0, 0.0, 0.0, 0.0));
        assert_eq!((r.delta1, r.delta2, r.delta3), (1.0, 1.0, 1.0));
    }

    #[test]
    fn ratio_boundary_is_strict() {
        let t = [2.0, 4.0, 8.0];
        let p: Vec<f64> = t.iter().map(|v| v * 1.25).collect();
        let r = depth_errors_m(&p, &t).unwrap();
        assert_eq!(r.delta1, 0.0);
        assert_eq!(r.delta2, 1.0);
    }

    #[test]
    fn raster_variant_uses_co_measured_pixels() {
        let n = NormalizationSpec::default();
        let t = RasterMap::new(1, 3, vec![n.normalize(10.0), -1.0, n.normalize(20.0)], n).unwrap();
        let p = RasterMap::new(1, 3, vec![n.normalize(10.0), n.normalize(5.0), -1.0], n).unwrap();
        let r = depth_errors(&p, &t).unwrap();
        assert_eq!(r.count, 1);
        assert!(r.abs_rel < 1e-6);
        let none = RasterMap::dropped(1, 3, n);
        assert!(matches!(depth_errors(&none, &t), Err(MetricError::Empty(_))));
    }
}
