//! Chamfer distance and pairwise distance matrices over sets of clouds.

use dusty_lidar::{Point3, PointCloud};
use rayon::prelude::*;

use crate::error::{MetricError, Result};

/// Structure-of-arrays copy of a cloud for the nearest-neighbor loops.
#[derive(Clone, Debug)]
pub struct PackedCloud {
    x: Vec<f32>,
    y: Vec<f32>,
    z: Vec<f32>,
}

impl PackedCloud {
    pub fn new(points: &[Point3]) -> Self {
        Self {
            x: points.iter().map(|p| p[0]).collect(),
            y: points.iter().map(|p| p[1]).collect(),
            z: points.iter().map(|p| p[2]).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

/// Squared distance in the exact f32 expression every caller must share.
#[inline(always)]
pub fn sq_dist(ax: f32, ay: f32, az: f32, bx: f32, by: f32, bz: f32) -> f32 {
    let (dx, dy, dz) = (ax - bx, ay - by, az - bz);
    dx * dx + dy * dy + dz * dz
}

/// Mean over `a` of the squared distance to the nearest point of `b`. Mins
/// are exact regardless of scan order; the sum runs in index order.
fn directed(a: &PackedCloud, b: &PackedCloud) -> f64 {
    const LANES: usize = 8;
    let n = b.len();
    let full = n / LANES * LANES;
    let mut sum = 0.0f64;
    for i in 0..a.len() {
        let (ax, ay, az) = (a.x[i], a.y[i], a.z[i]);
        let mut best = [f32::INFINITY; LANES];
        for j in (0..full).step_by(LANES) {
            for l in 0..LANES {
                let d = sq_dist(ax, ay, az, b.x[j + l], b.y[j + l], b.z[j + l]);
                if d < best[l] {
                    best[l] = d;
                }
            }
        }
        let mut m = best.iter().copied().fold(f32::INFINITY, f32::min);
        for j in full..n {
            m = m.min(sq_dist(ax, ay, az, b.x[j], b.y[j], b.z[j]));
        }
        sum += m as f64;
    }
    sum / a.len() as f64
}

pub fn chamfer_packed(a: &PackedCloud, b: &PackedCloud) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricError::Empty("chamfer needs two nonempty clouds".into()));
    }
    Ok(directed(a, b) + directed(b, a))
}

/// Mean squared nearest-neighbor distance from A to B plus from B to A.
pub fn chamfer(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    chamfer_packed(&PackedCloud::new(&a.points), &PackedCloud::new(&b.points))
}

/// Dense row-major matrix of Chamfer distances.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl DistanceMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(MetricError::Shape(format!("{rows}x{cols} matrix from {} entries", data.len())));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }
}

fn pack_all(clouds: &[PointCloud]) -> Result<Vec<PackedCloud>> {
    clouds
        .iter()
        .enumerate()
        .map(|(i, c)| {
            if c.is_empty() {
                Err(MetricError::Empty(format!("cloud {i} has no points")))
            } else {
                Ok(PackedCloud::new(&c.points))
            }
        })
        .collect()
}

/// Rows are reference clouds, columns generated clouds.
pub fn cross_distances(refs: &[PointCloud], gens: &[PointCloud]) -> Result<DistanceMatrix> {
    let (r, g) = (pack_all(refs)?, pack_all(gens)?);
    let data: Vec<f64> = (0..r.len() * g.len())
        .into_par_iter()
        .map(|k| chamfer_packed(&r[k / g.len()], &g[k % g.len()]))
        .collect::<Result<_>>()?;
    DistanceMatrix::new(r.len(), g.len(), data)
}

/// Symmetric matrix over `refs ++ gens`; the diagonal is zero.
pub fn union_distances(refs: &[PointCloud], gens: &[PointCloud]) -> Result<DistanceMatrix> {
    let all: Vec<PackedCloud> = pack_all(refs)?.into_iter().chain(pack_all(gens)?).collect();
    let n = all.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let vals: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| chamfer_packed(&all[i], &all[j]))
        .collect::<Result<_>>()?;
    let mut data = vec![0.0; n * n];
    for (&(i, j), &v) in pairs.iter().zip(&vals) {
        data[i * n + j] = v;
        data[j * n + i] = v;
    }
    DistanceMatrix::new(n, n, data)
}
