//! Tolerance rule for baseline generators whose drops only approximate the
//! drop value, and the search that picks its β.

use dusty_lidar::{DropIndicator, RasterMap};
use dusty_tensor::rng;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MetricError, Result};
use crate::report::MetricReport;

/// Width of the normalized value range.
pub const NORMALIZED_RANGE: f64 = 2.0;

/// Pixels with `|x − α| ≤ β·2` count as dropped; β = 0 is exact matching.
pub fn drop_threshold(x: &RasterMap, beta: f64) -> DropIndicator {
    let alpha = x.drop_value() as f64;
    let tol = beta * NORMALIZED_RANGE;
    DropIndicator {
        height: x.height(),
        width: x.width(),
        measured: x.values().iter().map(|&v| (v as f64 - alpha).abs() > tol).collect(),
    }
}

/// Snaps every pixel classified as dropped to exactly α.
pub fn apply_threshold(x: &RasterMap, beta: f64) -> RasterMap {
    let ind = drop_threshold(x, beta);
    let alpha = x.drop_value();
    let values = x
        .values()
        .iter()
        .zip(&ind.measured)
        .map(|(&v, &m)| if m { v } else { alpha })
        .collect();
    x.with_values(values).expect("same shape and range")
}

/// `10·JSD − COV + 100·MMD + 1-NNA`, lower is better.
pub fn weighted_score(jsd: f64, cov: f64, mmd: f64, one_nna: f64) -> f64 {
    10.0 * jsd - cov + 100.0 * mmd + one_nna
}

pub fn report_score(r: &MetricReport) -> f64 {
    weighted_score(r.jsd.mean, r.cov.mean, r.mmd.mean, r.one_nna.mean)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToleranceConfig {
    pub lower: f64,
    pub upper: f64,
    pub trials: usize,
    pub seed: u64,
}

impl Default for ToleranceConfig {
    fn default() -> Self {
        Self {
            lower: 1e-3,
            upper: 1e-1,
            trials: 100,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToleranceResult {
    pub beta: f64,
    pub score: f64,
    /// `(β, score)` per trial in draw order.
    pub trials: Vec<(f64, f64)>,
}

/// Seeded log-uniform random search for the β minimizing `score(β)`. Ties
/// keep the smaller β.
pub fn tune_tolerance<F>(cfg: &ToleranceConfig, mut score: F) -> Result<ToleranceResult>
where
    F: FnMut(f64) -> Result<f64>,
{
    if !(cfg.lower > 0.0 && cfg.lower <= cfg.upper) || cfg.trials == 0 {
        return Err(MetricError::Config(format!(
            "tolerance search needs 0 < lower <= upper and trials > 0, got {cfg:?}"
        )));
    }
    let mut r = rng::stream(cfg.seed, "tolerance");
    let (lo, hi) = (cfg.lower.ln(), cfg.upper.ln());
    let mut trials = Vec::with_capacity(cfg.trials);
    let mut best = (f64::NAN, f64::INFINITY);
    for _ in 0..cfg.trials {
        let beta = if hi > lo { r.gen_range(lo..hi).exp() } else { cfg.lower };
        let s = score(beta)?;
        if s < best.1 || (s == best.1 && beta < best.0) {
            best = (beta, s);
        }
        trials.push((beta, s));
    }
    if best.0.is_nan() {
        return Err(MetricError::Config("every tolerance trial scored NaN".into()));
    }
    Ok(ToleranceResult {
        beta: best.0,
        score: best.1,
        trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use dusty_lidar::NormalizationSpec;

    fn raster() -> RasterMap {
        RasterMap::new(1, 5, vec![-1.0, -0.99, -0.984, -0.983, 0.5], NormalizationSpec::default()).unwrap()
    }

    #[test]
    fn kitti_setting_uses_point_zero_one_six() {
        let ind = drop_threshold(&raster(), 0.008);
        assert_eq!(ind.measured, vec![false, false, false, true, true]);
    }

    #[test]
    fn zero_beta_is_exact_matching() {
        assert_eq!(drop_threshold(&raster(), 0.0), raster().drop_indicator());
    }

    #[test]
    fn unit_beta_drops_everything() {
        assert!(drop_threshold(&raster(), 1.0).measured.iter().all(|m| !m));
    }

    #[test]
    fn apply_snaps_to_alpha() {
        let r = apply_threshold(&raster(), 0.008);
        assert_eq!(r.values(), &[-1.0, -1.0, -1.0, -0.983, 0.5]);
    }

    #[test]
    fn table_row_arithmetic() {
        let s = weighted_score(0.0645, 0.0499, 0.00236, 0.9999);
        assert!((s - 1.8310).abs() < 1e-9, "{s}");
    }

    #[test]
    fn search_finds_the_minimum_region() {
        let cfg = ToleranceConfig::default();
        let res = tune_tolerance(&cfg, |b| Ok((b.ln() - 0.01f64.ln()).abs())).unwrap();
        assert_eq!(res.trials.len(), 100);
        assert!((res.beta / 0.01 - 1.0).abs() < 0.1, "{}", res.beta);
        assert!(res.trials.iter().all(|&(b, _)| (1e-3..=1e-1).contains(&b)));
    }

    #[test]
    fn flat_score_keeps_the_smallest_beta() {
        let res = tune_tolerance(&ToleranceConfig::default(), |_| Ok(1.0)).unwrap();
        let min = res.trials.iter().map(|t| t.0).fold(f64::INFINITY, f64::min);
        assert_eq!(res.beta, min);
    }
}
