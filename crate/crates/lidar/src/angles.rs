//! Per-pixel beam angles.
//!
//! Axes: x forward, y left, z up. Azimuth is measured from +x toward +y,
//! elevation from the xy-plane toward +z. Column 0 looks backward over the
//! left shoulder and columns sweep clockwise seen from above, so azimuth
//! decreases along a row.

use std::f64::consts::PI;

use crate::error::{LidarError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct AngleTable {
    pub height: usize,
    pub width: usize,
    /// Radians, row-major H×W.
    pub elevation: Vec<f32>,
    /// Radians in `(-π, π]`, row-major H×W.
    pub azimuth: Vec<f32>,
}

/// Nominal azimuth of column `col`: pixel centers spaced evenly over a full
/// turn, starting just below +π.
pub fn nominal_azimuth(col: usize, width: usize) -> f64 {
    PI - 2.0 * PI * (col as f64 + 0.5) / width as f64
}

pub(crate) fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

impl AngleTable {
    pub fn new(height: usize, width: usize, elevation: Vec<f32>, azimuth: Vec<f32>) -> Result<Self> {
        let n = height * width;
        if n == 0 || elevation.len() != n || azimuth.len() != n {
            return Err(LidarError::Shape(format!(
                "{height}x{width} angle table needs {n} elevations and azimuths, got {} and {}",
                elevation.len(),
                azimuth.len()
            )));
        }
        Ok(Self {
            height,
            width,
            elevation,
            azimuth,
        })
    }

    /// Idealized scanner: elevations linear from `top_deg` down to
    /// `bottom_deg`, azimuths at nominal column centers.
    pub fn linear(height: usize, width: usize, top_deg: f64, bottom_deg: f64) -> Self {
        let step = if height > 1 {
            (bottom_deg - top_deg) / (height - 1) as f64
        } else {
            0.0
        };
        let mut elevation = Vec::with_capacity(height * width);
        let mut azimuth = Vec::with_capacity(height * width);
        for r in 0..height {
            let el = (top_deg + step * r as f64).to_radians() as f32;
            for c in 0..width {
                elevation.push(el);
                azimuth.push(nominal_azimuth(c, width) as f32);
            }
        }
        Self {
            height,
            width,
            elevation,
            azimuth,
        }
    }

    /// Vertical field of view of a 64-beam automotive scanner (+2° to −24.8°).
    pub fn synthetic(height: usize, width: usize) -> Self {
        Self::linear(height, width, 2.0, -24.8)
    }

    pub fn get(&self, row: usize, col: usize) -> (f32, f32) {
        let i = row * self.width + col;
        (self.elevation[i], self.azimuth[i])
    }
}

/// Angles observed in one scan; `None` where the pixel had no return.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservedAngles {
    pub height: usize,
    pub width: usize,
    /// `(elevation, azimuth)` in radians.
    pub angles: Vec<Option<(f32, f32)>>,
}

/// Per-pixel mean of the observed angles over a training set. Elevation is
/// an arithmetic mean; azimuth a circular mean so pixels on the ±π seam
/// average correctly. Pixels never observed are filled by interpolating
/// along their row.
pub fn compute_angle_table(samples: &[ObservedAngles]) -> Result<AngleTable> {
    let first = samples
        .first()
        .ok_or_else(|| LidarError::Config("angle table needs at least one sample".into()))?;
    let (h, w) = (first.height, first.width);
    let n = h * w;
    let mut el_sum = vec![0.0f64; n];
    let mut sin_sum = vec![0.0f64; n];
    let mut cos_sum = vec![0.0f64; n];
    let mut count = vec![0u32; n];
    for s in samples {
        if s.height != h || s.width != w || s.angles.len() != n {
            return Err(LidarError::Shape(format!(
                "sample is {}x{}, expected {h}x{w}",
                s.height, s.width
            )));
        }
        for (i, a) in s.angles.iter().enumerate() {
            if let Some((el, az)) = *a {
                el_sum[i] += el as f64;
                sin_sum[i] += (az as f64).sin();
                cos_sum[i] += (az as f64).cos();
                count[i] += 1;
            }
        }
    }

    let mut elevation = vec![0.0f32; n];
    let mut azimuth = vec![0.0f32; n];
    for r in 0..h {
        let row = r * w..(r + 1) * w;
        let seen: Vec<usize> = (0..w).filter(|&c| count[r * w + c] > 0).collect();
        if seen.is_empty() {
            return Err(LidarError::Config(format!("row {r} is never observed")));
        }
        // Means for observed columns; azimuth kept as a residual from the
        // nominal column center so interpolation works across the seam.
        let mut el_row = vec![0.0f64; w];
        let mut res_row = vec![0.0f64; w];
        for &c in &seen {
            let i = r * w + c;
            el_row[c] = el_sum[i] / count[i] as f64;
            let mean_az = sin_sum[i].atan2(cos_sum[i]);
            res_row[c] = wrap_angle(mean_az - nominal_azimuth(c, w));
        }
        for c in 0..w {
            if count[r * w + c] == 0 {
                let (el, res) = interpolate_cyclic(&seen, &el_row, &res_row, c, w);
                el_row[c] = el;
                res_row[c] = res;
            }
        }
        for (c, i) in row.enumerate() {
            elevation[i] = el_row[c] as f32;
            azimuth[i] = if count[i] > 0 {
                sin_sum[i].atan2(cos_sum[i]) as f32
            } else {
                wrap_angle(nominal_azimuth(c, w) + res_row[c]) as f32
            };
        }
    }
    AngleTable::new(h, w, elevation, azimuth)
}

/// Linear interpolation between the nearest observed columns on either side,
/// wrapping around the row ends.
fn interpolate_cyclic(seen: &[usize], el: &[f64], res: &[f64], c: usize, w: usize) -> (f64, f64) {
    let next = seen.iter().copied().find(|&s| s > c).unwrap_or(seen[0]);
    let prev = seen.iter().copied().rev().find(|&s| s < c).unwrap_or(seen[seen.len() - 1]);
    let gap = (next + w - prev) % w;
    if gap == 0 {
        return (el[prev], res[prev]);
    }
    let t = ((c + w - prev) % w) as f64 / gap as f64;
    let dres = wrap_angle(res[next] - res[prev]);
    (el[prev] + t * (el[next] - el[prev]), res[prev] + t * dres)
}
