use dusty_lidar::{Point3, PointCloud};
use dusty_tensor::rng;
use rand::Rng;

use crate::error::{MetricError, Result};

fn dist2(a: Point3, b: Point3) -> f32 {
    let (dx, dy, dz) = (a[0] - b[0], a[1] - b[1], a[2] - b[2]);
    dx * dx + dy * dy + dz * dz
}

/// Farthest point sampling. Starts from a seeded random index, then greedily
/// adds the point with the largest distance to the selection; ties go to
/// the lowest index. Returns indices in selection order.
pub fn fps_indices(points: &[Point3], k: usize, seed: u64) -> Result<Vec<usize>> {
    let n = points.len();
    if k == 0 || k > n {
        return Err(MetricError::Config(format!("cannot pick {k} of {n} points")));
    }
    let start = rng::stream(seed, "fps").gen_range(0..n);
    let mut picked = Vec::with_capacity(k);
    picked.push(start);
    let mut nearest: Vec<f32> = points.iter().map(|&p| dist2(p, points[start])).collect();
    while picked.len() < k {
        let mut best = 0;
        for i in 1..n {
            if nearest[i] > nearest[best] {
                best = i;
            }
        }
        picked.push(best);
        let q = points[best];
        for (d, &p) in nearest.iter_mut().zip(points) {
            *d = d.min(dist2(p, q));
        }
    }
    Ok(picked)
}

pub fn fps(cloud: &PointCloud, k: usize, seed: u64) -> Result<PointCloud> {
    let idx = fps_indices(&cloud.points, k, seed)?;
    Ok(PointCloud {
        points: idx.iter().map(|&i| cloud.points[i]).collect(),
        pixels: cloud.pixels.as_ref().map(|px| idx.iter().map(|&i| px[i]).collect()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_budget_is_a_permutation() {
        let pts: Vec<Point3> = (0..12).map(|i| [i as f32, (i * i % 5) as f32, 0.0]).collect();
        let mut idx = fps_indices(&pts, 12, 3).unwrap();
        idx.sort_unstable();
        assert_eq!(idx, (0..12).collect::<Vec<_>>());
    }

    #[test]
    fn second_pick_is_farthest_from_start() {
        let pts: Vec<Point3> = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [5.0, 0.0, 0.0], [2.0, 0.0, 0.0]];
        for seed in 0..8 {
            let idx = fps_indices(&pts, 2, seed).unwrap();
            let s = pts[idx[0]];
            let far = (0..4)
                .max_by(|&a, &b| dist2(pts[a], s).total_cmp(&dist2(pts[b], s)).then(b.cmp(&a)))
                .unwrap();
            assert_eq!(idx[1], far);
        }
    }

    #[test]
    fn too_many_points_is_an_error() {
        assert!(fps_indices(&[[0.0; 3]], 2, 0).is_err());
        assert!(fps_indices(&[[0.0; 3]], 0, 0).is_err());
    }
}
