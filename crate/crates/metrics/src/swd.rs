//! Sliced Wasserstein distance between sets of single-channel images, over
//! 7×7 patches drawn from each level of a Laplacian pyramid.

use dusty_tensor::rng;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{MetricError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwdConfig {
    /// Upper bound; levels whose size would drop below the patch are skipped.
    pub levels: usize,
    pub patch: usize,
    pub patches_per_image: usize,
    pub projections: usize,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for SwdConfig {
    fn default() -> Self {
        Self {
            levels: 3,
            patch: 7,
            patches_per_image: 64,
            projections: 128,
            repeats: 4,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
struct Plane {
    h: usize,
    w: usize,
    v: Vec<f32>,
}

const BINOMIAL: [f32; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

/// 5-tap binomial blur: circular horizontally, renormalized over in-bounds
/// rows vertically.
fn blur5(p: &Plane) -> Plane {
    let (h, w) = (p.h, p.w);
    let mut tmp = vec![0.0f32; h * w];
    for r in 0..h {
        for c in 0..w {
            let mut s = 0.0;
            for (k, &t) in BINOMIAL.iter().enumerate() {
                let cc = (c + w * 2 + k - 2) % w;
                s += t * p.v[r * w + cc];
            }
            tmp[r * w + c] = s;
        }
    }
    let mut out = vec![0.0f32; h * w];
    for r in 0..h {
        for c in 0..w {
            let (mut s, mut norm) = (0.0, 0.0);
            for (k, &t) in BINOMIAL.iter().enumerate() {
                let rr = r as isize + k as isize - 2;
                if rr >= 0 && (rr as usize) < h {
                    s += t * tmp[rr as usize * w + c];
                    norm += t;
                }
            }
            out[r * w + c] = s / norm;
        }
    }
    Plane { h, w, v: out }
}

fn downsample(p: &Plane) -> Plane {
    let b = blur5(p);
    let (h, w) = (p.h / 2, p.w / 2);
    let v = (0..h * w).map(|i| b.v[(i / w) * 2 * p.w + (i % w) * 2]).collect();
    Plane { h, w, v }
}

fn upsample_to(p: &Plane, h: usize, w: usize) -> Plane {
    let v = (0..h * w)
        .map(|i| {
            let (r, c) = ((i / w / 2).min(p.h - 1), (i % w / 2).min(p.w - 1));
            p.v[r * p.w + c]
        })
        .collect();
    blur5(&Plane { h, w, v })
}

fn laplacian_pyramid(img: &[f32], h: usize, w: usize, levels: usize) -> Vec<Plane> {
    let mut gauss = vec![Plane { h, w, v: img.to_vec() }];
    for _ in 1..levels {
        let next = downsample(gauss.last().unwrap());
        gauss.push(next);
    }
    let mut out = Vec::with_capacity(levels);
    for l in 0..levels {
        if l + 1 == levels {
            out.push(gauss[l].clone());
        } else {
            let up = upsample_to(&gauss[l + 1], gauss[l].h, gauss[l].w);
            let v = gauss[l].v.iter().zip(&up.v).map(|(a, b)| a - b).collect();
            out.push(Plane {
                h: gauss[l].h,
                w: gauss[l].w,
                v,
            });
        }
    }
    out
}

/// Number of pyramid levels that still fit a patch.
fn usable_levels(h: usize, w: usize, cfg: &SwdConfig) -> usize {
    let (mut h, mut w, mut n) = (h, w, 0);
    while n < cfg.levels && h >= cfg.patch && w >= cfg.patch {
        n += 1;
        h /= 2;
        w /= 2;
    }
    n
}

fn sliced_distance(a: &[f32], b: &[f32], dim: usize, dirs: &[Vec<f32>]) -> f64 {
    let project = |desc: &[f32], u: &[f32]| -> Vec<f32> {
        let mut p: Vec<f32> = desc.chunks_exact(dim).map(|d| d.iter().zip(u).map(|(x, y)| x * y).sum()).collect();
        p.sort_unstable_by(f32::total_cmp);
        p
    };
    let mut total = 0.0f64;
    for u in dirs {
        let (pa, pb) = (project(a, u), project(b, u));
        // Quantile matching: the larger set is read at the smaller set's ranks.
        let n = pa.len().min(pb.len());
        let mut s = 0.0f64;
        for i in 0..n {
            let x = pa[i * pa.len() / n];
            let y = pb[i * pb.len() / n];
            s += (x as f64 - y as f64).abs();
        }
        total += s / n as f64;
    }
    total / dirs.len() as f64
}

/// SWD between two sets of `h×w` images. Patch positions are drawn from the
/// seed and shared by both sets; descriptors are standardized with the
/// reference set's per-level mean and deviation, so a global offset between
/// the sets stays visible.
pub fn swd(refs: &[&[f32]], gens: &[&[f32]], h: usize, w: usize, cfg: &SwdConfig) -> Result<f64> {
    if refs.is_empty() || gens.is_empty() {
        return Err(MetricError::Empty("SWD needs two nonempty sets".into()));
    }
    if let Some(bad) = refs.iter().chain(gens).find(|im| im.len() != h * w) {
        return Err(MetricError::Shape(format!("image of {} values, expected {h}x{w}", bad.len())));
    }
    if cfg.patch == 0 || h < cfg.patch || w < cfg.patch {
        return Err(MetricError::Config(format!("{h}x{w} images are smaller than the {0}x{0} patch", cfg.patch)));
    }
    if cfg.projections == 0 || cfg.repeats == 0 || cfg.patches_per_image == 0 || cfg.levels == 0 {
        return Err(MetricError::Config("SWD counts must be positive".into()));
    }
    let levels = usable_levels(h, w, cfg);
    let pyr_r: Vec<Vec<Plane>> = refs.iter().map(|im| laplacian_pyramid(im, h, w, levels)).collect();
    let pyr_g: Vec<Vec<Plane>> = gens.iter().map(|im| laplacian_pyramid(im, h, w, levels)).collect();
    let p = cfg.patch;
    let dim = p * p;
    let n_img = refs.len().max(gens.len());

    let mut pos_rng = rng::stream(cfg.seed, "swd-patches");
    let mut descriptors = Vec::with_capacity(levels);
    for l in 0..levels {
        let (lh, lw) = (pyr_r[0][l].h, pyr_r[0][l].w);
        let positions: Vec<Vec<(usize, usize)>> = (0..n_img)
            .map(|_| {
                (0..cfg.patches_per_image)
                    .map(|_| (pos_rng.gen_range(0..=lh - p), pos_rng.gen_range(0..=lw - p)))
                    .collect()
            })
            .collect();
        let extract = |pyr: &[Vec<Plane>]| -> Vec<f32> {
            let mut out = Vec::with_capacity(pyr.len() * cfg.patches_per_image * dim);
            for (i, planes) in pyr.iter().enumerate() {
                let pl = &planes[l];
                for &(y, x) in &positions[i] {
                    for r in y..y + p {
                        out.extend_from_slice(&pl.v[r * pl.w + x..r * pl.w + x + p]);
                    }
                }
            }
            out
        };
        let (mut a, mut b) = (extract(&pyr_r), extract(&pyr_g));
        let n = a.len() as f64;
        let mean = a.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = a.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        let sd = if var > 1e-24 { var.sqrt() } else { 1.0 };
        for v in a.iter_mut().chain(b.iter_mut()) {
            *v = ((*v as f64 - mean) / sd) as f32;
        }
        descriptors.push((a, b));
    }

    let mut proj_rng = rng::stream(cfg.seed, "swd-projections");
    let mut total = 0.0;
    for _ in 0..cfg.repeats {
        for (a, b) in &descriptors {
            let dirs: Vec<Vec<f32>> = (0..cfg.projections)
                .map(|_| {
                    let u: Vec<f32> = (0..dim).map(|_| proj_rng.sample::<f32, _>(StandardNormal)).collect();
                    let norm = u.iter().map(|x| x * x).sum::<f32>().sqrt();
                    u.into_iter().map(|x| x / norm).collect()
                })
                .collect();
            total += sliced_distance(a, b, dim, &dirs);
        }
    }
    Ok(total / (cfg.repeats * levels) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn images(n: usize, h: usize, w: usize, seed: u64) -> Vec<Vec<f32>> {
        let mut r = rng::stream(seed, "img");
        (0..n)
            .map(|_| (0..h * w).map(|i| ((i % w) as f32 * 0.2).sin() * 0.5 + r.gen_range(-0.2..0.2)).collect())
            .collect()
    }

    fn refs(v: &[Vec<f32>]) -> Vec<&[f32]> {
        v.iter().map(|x| x.as_slice()).collect()
    }

    #[test]
    fn identical_sets_are_zero() {
        let x = images(6, 16, 64, 1);
        let cfg = SwdConfig::default();
        assert!(swd(&refs(&x), &refs(&x), 16, 64, &cfg).unwrap() < 1e-6);
    }

    #[test]
    fn grows_with_mean_shift() {
        let x = images(6, 16, 64, 2);
        let cfg = SwdConfig::default();
        let mut last = 0.0;
        for c in [0.1f32, 0.2, 0.4] {
            let y: Vec<Vec<f32>> = x.iter().map(|im| im.iter().map(|v| v + c).collect()).collect();
            let d = swd(&refs(&x), &refs(&y), 16, 64, &cfg).unwrap();
            assert!(d > last, "shift {c}: {d} <= {last}");
            last = d;
        }
    }

    #[test]
    fn constants_survive_blur() {
        let p = Plane { h: 5, w: 6, v: vec![0.7; 30] };
        assert!(blur5(&p).v.iter().all(|&v| (v - 0.7).abs() < 1e-6));
    }

    #[test]
    fn too_small_images_are_rejected() {
        let x = vec![vec![0.0f32; 6 * 32]];
        assert!(matches!(
            swd(&refs(&x), &refs(&x), 6, 32, &SwdConfig::default()),
            Err(MetricError::Config(_))
        ));
    }

    #[test]
    fn pyramid_stops_before_patch_size() {
        let cfg = SwdConfig::default();
        assert_eq!(usable_levels(16, 64, &cfg), 2);
        assert_eq!(usable_levels(64, 256, &cfg), 3);
    }
}
