//! Ordered scan sequences → rasters.

use crate::angles::ObservedAngles;
use crate::error::{LidarError, Result};
use crate::normalize::{NormalizationSpec, DROP_VALUE};
use crate::points::cartesian_to_spherical;
use crate::raster::RasterMap;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScanPoint {
    pub xyz: [f32; 3],
    /// Laser/ring id, when the sensor reports one.
    pub ring: Option<u16>,
}

impl ScanPoint {
    pub fn new(xyz: [f32; 3]) -> Self {
        Self { xyz, ring: None }
    }

    /// All-zero and non-finite points mark missing returns.
    pub fn is_missing(&self) -> bool {
        self.xyz.iter().any(|v| !v.is_finite()) || self.xyz == [0.0; 3]
    }
}

/// How an ordered sequence is split into raster rows.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RowChunking {
    /// H equal contiguous chunks in sequence order (the first chunk is the
    /// top row). Assumes the sequence is already ordered beam by beam;
    /// azimuth wrap inside a beam is not detected.
    ByPosition,
    /// Row `r` holds every point whose ring id is `r`, in sequence order.
    ByRing,
}

#[derive(Clone, Debug)]
pub struct IngestedScan {
    pub raster: RasterMap,
    pub angles: ObservedAngles,
}

/// Builds an H×W raster by taking W evenly strided samples from each row's
/// sub-sequence, starting at its first point. Each row needs at least W
/// points.
pub fn sequence_to_raster(
    points: &[ScanPoint],
    height: usize,
    width: usize,
    chunking: RowChunking,
    norm: NormalizationSpec,
) -> Result<IngestedScan> {
    if height == 0 || width == 0 {
        return Err(LidarError::Config("raster shape must be nonzero".into()));
    }
    let rows: Vec<Vec<ScanPoint>> = match chunking {
        RowChunking::ByPosition => {
            if points.len() < height * width {
                return Err(LidarError::Ingest(format!(
                    "{} points cannot fill {height} rows of {width}",
                    points.len()
                )));
            }
            let n = points.len();
            (0..height)
                .map(|r| points[r * n / height..(r + 1) * n / height].to_vec())
                .collect()
        }
        RowChunking::ByRing => {
            let mut rows = vec![Vec::new(); height];
            for (k, p) in points.iter().enumerate() {
                let ring = p
                    .ring
                    .ok_or_else(|| LidarError::Ingest(format!("point {k} has no ring id")))?
                    as usize;
                rows.get_mut(ring)
                    .ok_or_else(|| LidarError::Ingest(format!("point {k} has ring {ring} >= {height}")))?
                    .push(*p);
            }
            rows
        }
    };

    let mut values = Vec::with_capacity(height * width);
    let mut angles = Vec::with_capacity(height * width);
    for (r, row) in rows.iter().enumerate() {
        if row.len() < width {
            return Err(LidarError::Ingest(format!(
                "row {r} has {} points, needs at least {width}",
                row.len()
            )));
        }
        for j in 0..width {
            let p = row[j * row.len() / width];
            if p.is_missing() {
                values.push(DROP_VALUE);
                angles.push(None);
            } else {
                let (range, el, az) = cartesian_to_spherical(p.xyz);
                values.push(norm.normalize(range));
                angles.push(Some((el, az)));
            }
        }
    }
    Ok(IngestedScan {
        raster: RasterMap::new(height, width, values, norm)?,
        angles: ObservedAngles {
            height,
            width,
            angles,
        },
    })
}
