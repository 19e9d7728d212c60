use dusty_lidar::PointCloud;
use serde::{Deserialize, Serialize};

use crate::error::{MetricError, Result};

/// Bird's-eye occupancy grid: `bins × bins` cells over
/// `[-half_extent_m, half_extent_m]²` in x/y. Points outside are ignored.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BevGrid {
    pub half_extent_m: f32,
    pub bins: usize,
}

impl Default for BevGrid {
    fn default() -> Self {
        Self {
            half_extent_m: 80.0,
            bins: 100,
        }
    }
}

impl BevGrid {
    pub fn label(&self) -> String {
        format!("bev{}x{}@±{}m", self.bins, self.bins, self.half_extent_m)
    }

    fn cell(&self, x: f32, y: f32) -> Option<usize> {
        let e = self.half_extent_m as f64;
        let scale = self.bins as f64 / (2.0 * e);
        let cx = ((x as f64 + e) * scale).floor();
        let cy = ((y as f64 + e) * scale).floor();
        let b = self.bins as f64;
        (cx >= 0.0 && cx < b && cy >= 0.0 && cy < b).then(|| cy as usize * self.bins + cx as usize)
    }

    /// Point counts per cell, summed over every cloud.
    pub fn histogram(&self, clouds: &[PointCloud]) -> Vec<f64> {
        let mut h = vec![0.0; self.bins * self.bins];
        for c in clouds {
            for p in &c.points {
                if let Some(k) = self.cell(p[0], p[1]) {
                    h[k] += 1.0;
                }
            }
        }
        h
    }
}

/// Jensen–Shannon divergence (natural log) between two unnormalized
/// histograms.
pub fn jsd_histograms(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(MetricError::Shape(format!("histograms of {} and {} bins", p.len(), q.len())));
    }
    let (sp, sq): (f64, f64) = (p.iter().sum(), q.iter().sum());
    if sp <= 0.0 || sq <= 0.0 {
        return Err(MetricError::Empty("JSD of an empty histogram".into()));
    }
    let mut d = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let (a, b) = (a / sp, b / sq);
        let m = 0.5 * (a + b);
        if a > 0.0 {
            d += 0.5 * a * (a / m).ln();
        }
        if b > 0.0 {
            d += 0.5 * b * (b / m).ln();
        }
    }
    Ok(d.clamp(0.0, std::f64::consts::LN_2))
}

pub fn jsd(refs: &[PointCloud], gens: &[PointCloud], grid: &BevGrid) -> Result<f64> {
    jsd_histograms(&grid.histogram(refs), &grid.histogram(gens))
}
