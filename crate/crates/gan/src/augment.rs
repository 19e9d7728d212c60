//! Differentiable augmentations for discriminator inputs.
//!
//! Each sample gets its own draw. Color is brightness (additive ±0.3, then
//! clamped to [−1, 1]) and contrast (scale in [0.5, 1.5] about the sample
//! mean). Translation shifts circularly by up to ±W/8 columns and by up to
//! ±H/8 rows with α fill. Cutout sets an H/2 × W/2 rectangle to α; it is
//! clipped vertically and wraps horizontally.

use dusty_tensor::{GatherMap, Tensor, Var};
use rand::Rng;

use crate::config::AugmentConfig;
use crate::error::{GanError, Result};

pub const BRIGHTNESS: f32 = 0.3;
pub const CONTRAST: (f32, f32) = (0.5, 1.5);

/// Randomness of one augmentation pass, frozen so it can be replayed.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentDraw {
    pub height: usize,
    pub width: usize,
    pub brightness: Option<Vec<f32>>,
    pub contrast: Option<Vec<f32>>,
    /// `(rows, cols)` shift per sample.
    pub shift: Option<Vec<(i64, i64)>>,
    /// Top-left `(row, col)` of the cutout per sample; may start above row 0.
    pub cutout: Option<Vec<(i64, i64)>>,
}

impl AugmentDraw {
    pub fn sample<R: Rng + ?Sized>(
        n: usize,
        height: usize,
        width: usize,
        cfg: &AugmentConfig,
        rng: &mut R,
    ) -> Self {
        let mut brightness = None;
        let mut contrast = None;
        if cfg.color {
            brightness = Some((0..n).map(|_| rng.gen_range(-BRIGHTNESS..=BRIGHTNESS)).collect());
            contrast = Some((0..n).map(|_| rng.gen_range(CONTRAST.0..=CONTRAST.1)).collect());
        }
        let shift = cfg.translation.then(|| {
            let (sh, sw) = ((height / 8) as i64, (width / 8) as i64);
            (0..n)
                .map(|_| (rng.gen_range(-sh..=sh), rng.gen_range(-sw..=sw)))
                .collect()
        });
        let cutout = cfg.cutout.then(|| {
            let (ch, cw) = ((height / 2) as i64, (width / 2) as i64);
            (0..n)
                .map(|_| {
                    let cy = rng.gen_range(0..height as i64);
                    let cx = rng.gen_range(0..width as i64);
                    (cy - ch / 2, cx - cw / 2)
                })
                .collect()
        });
        AugmentDraw { height, width, brightness, contrast, shift, cutout }
    }

    /// Gather map for translation and cutout, or `None` when both are off.
    fn spatial_map(&self, n: usize) -> Result<Option<GatherMap>> {
        if self.shift.is_none() && self.cutout.is_none() {
            return Ok(None);
        }
        let (h, w) = (self.height as i64, self.width as i64);
        let (ch, cw) = (h / 2, w / 2);
        let mut index = Vec::with_capacity(n * (h * w) as usize);
        for s in 0..n {
            let (dy, dx) = self.shift.as_ref().map_or((0, 0), |v| v[s]);
            let cut = self.cutout.as_ref().map(|v| v[s]);
            let base = s as i64 * h * w;
            for r in 0..h {
                for c in 0..w {
                    if let Some((top, left)) = cut {
                        let in_rows = (top..top + ch).contains(&r);
                        let in_cols = (c - left).rem_euclid(w) < cw;
                        if in_rows && in_cols {
                            index.push(None);
                            continue;
                        }
                    }
                    let sr = r - dy;
                    if !(0..h).contains(&sr) {
                        index.push(None);
                        continue;
                    }
                    let sc = (c - dx).rem_euclid(w);
                    index.push(Some((base + sr * w + sc) as u32));
                }
            }
        }
        let shape = vec![n, 1, self.height, self.width];
        Ok(Some(GatherMap::new(shape.clone(), shape, index)?))
    }

    fn check(&self, shape: &[usize]) -> Result<usize> {
        if shape.len() != 4 || shape[1] != 1 || shape[2] != self.height || shape[3] != self.width {
            return Err(GanError::Shape(format!(
                "augment input {shape:?}, draw is for [N,1,{},{}]",
                self.height, self.width
            )));
        }
        let n = shape[0];
        let lens = [
            self.brightness.as_ref().map(Vec::len),
            self.contrast.as_ref().map(Vec::len),
            self.shift.as_ref().map(Vec::len),
            self.cutout.as_ref().map(Vec::len),
        ];
        if lens.iter().flatten().any(|&l| l != n) {
            return Err(GanError::Shape(format!("draw does not cover {n} samples")));
        }
        Ok(n)
    }

    /// Applies the frozen augmentation to an `[N,1,H,W]` node.
    pub fn apply<'g>(&self, x: Var<'g>, alpha: f32) -> Result<Var<'g>> {
        let shape = x.shape();
        let n = self.check(&shape)?;
        let graph = x.graph();
        let plane = self.height * self.width;
        let per_sample = |v: &[f32]| Tensor::from_fn(shape.clone(), |i| v[i / plane]);
        let mut y = x;
        if let Some(b) = &self.brightness {
            y = y.add(graph.constant(per_sample(b)))?.clamp(-1.0, 1.0)?;
        }
        if let Some(c) = &self.contrast {
            let mean = y
                .sum_to(&[n, 1, 1, 1])?
                .scale(1.0 / plane as f32)?
                .broadcast_to(&shape)?;
            y = y.sub(mean)?.mul_const(per_sample(c))?.add(mean)?;
        }
        if let Some(map) = self.spatial_map(n)? {
            y = y.gather(map, alpha)?;
        }
        Ok(y)
    }
}

/// Draws fresh randomness and applies it.
pub fn diff_augment<'g, R: Rng + ?Sized>(
    x: Var<'g>,
    cfg: &AugmentConfig,
    alpha: f32,
    rng: &mut R,
) -> Result<Var<'g>> {
    if !cfg.any() {
        return Ok(x);
    }
    let s = x.shape();
    if s.len() != 4 {
        return Err(GanError::Shape(format!("augment input {s:?}, expected [N,1,H,W]")));
    }
    let draw = AugmentDraw::sample(s[0], s[2], s[3], cfg, rng);
    draw.apply(x, alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use dusty_lidar::DROP_VALUE;
    use dusty_tensor::{rng::stream, Graph};

    fn input(n: usize) -> Tensor {
        Tensor::randn([n, 1, 8, 16], &mut stream(1, "x")).map(|v| (0.5 * v).tanh())
    }

    fn bare() -> AugmentDraw {
        AugmentDraw {
            height: 8,
            width: 16,
            brightness: None,
            contrast: None,
            shift: None,
            cutout: None,
        }
    }

    #[test]
    fn all_off_is_identity() {
        let g = Graph::new();
        let x = g.constant(input(3));
        let y = diff_augment(x, &AugmentConfig::default(), DROP_VALUE, &mut stream(2, "a")).unwrap();
        assert_eq!(*y.value(), *x.value());
    }

    #[test]
    fn full_width_shift_is_identity() {
        let g = Graph::new();
        let x = g.constant(input(2));
        let draw = AugmentDraw { shift: Some(vec![(0, 16), (0, -16)]), ..bare() };
        assert_eq!(*draw.apply(x, DROP_VALUE).unwrap().value(), *x.value());
    }

    #[test]
    fn vertical_shift_fills_alpha() {
        let g = Graph::new();
        let x = g.constant(input(1));
        let draw = AugmentDraw { shift: Some(vec![(2, 3)]), ..bare() };
        let y = draw.apply(x, DROP_VALUE).unwrap();
        let (xv, yv) = (x.value(), y.value());
        for r in 0..8 {
            for c in 0..16 {
                let got = yv.data()[r * 16 + c];
                if r < 2 {
                    assert_eq!(got, DROP_VALUE);
                } else {
                    assert_eq!(got, xv.data()[(r - 2) * 16 + (c + 16 - 3) % 16]);
                }
            }
        }
    }

    #[test]
    fn cutout_region_is_alpha() {
        let g = Graph::new();
        let x = g.constant(input(1));
        // starts one row above the raster and wraps past the right edge
        let draw = AugmentDraw { cutout: Some(vec![(-1, 12)]), ..bare() };
        let y = draw.apply(x, DROP_VALUE).unwrap();
        let cut = y.value().data().iter().filter(|&&v| v == DROP_VALUE).count();
        assert_eq!(cut, 3 * 8);
        assert_eq!(y.value().data()[0], DROP_VALUE);
        assert_eq!(y.value().data()[3 * 16], x.value().data()[3 * 16]);
    }

    #[test]
    fn color_keeps_shape_and_range_after_brightness() {
        let g = Graph::new();
        let x = g.constant(Tensor::full([1, 1, 8, 16], 0.9));
        let draw = AugmentDraw { brightness: Some(vec![0.3]), ..bare() };
        let y = draw.apply(x, DROP_VALUE).unwrap();
        assert!(y.value().data().iter().all(|&v| v == 1.0));
        // contrast of a constant image is the identity
        let draw = AugmentDraw { contrast: Some(vec![1.4]), ..bare() };
        let y = draw.apply(x, DROP_VALUE).unwrap();
        assert!(y.value().data().iter().all(|&v| (v - 0.9).abs() < 1e-6));
    }

    #[test]
    fn gradient_counts_surviving_paths() {
        // translation + cutout only: d(sum)/dx is the number of output pixels
        // reading each input pixel
        let cfg = AugmentConfig { color: false, translation: true, cutout: true };
        let draw = AugmentDraw::sample(3, 8, 16, &cfg, &mut stream(3, "a"));
        let g = Graph::new();
        let x = g.param(input(3));
        let y = draw.apply(x, DROP_VALUE).unwrap();
        let grad = g.grad(y.sum().unwrap(), &[x]).unwrap().remove(0);
        let map = draw.spatial_map(3).unwrap().unwrap();
        let mut counts = vec![0.0f32; 3 * 128];
        for i in map.index.iter().flatten() {
            counts[*i as usize] += 1.0;
        }
        assert_eq!(grad.value().data(), counts.as_slice());
        assert!(counts.iter().any(|&c| c == 0.0));
    }

    #[test]
    fn gradient_matches_finite_differences_with_color() {
        let draw = AugmentDraw::sample(2, 8, 16, &AugmentConfig::all(), &mut stream(4, "a"));
        let x0 = input(2).map(|v| 0.5 * v);
        let f = |x: &Tensor| -> f64 {
            let g = Graph::new();
            let y = draw.apply(g.constant(x.clone()), DROP_VALUE).unwrap();
            y.value().data().iter().map(|&v| (v as f64).powi(2)).sum()
        };
        let g = Graph::new();
        let xv = g.param(x0.clone());
        let y = draw.apply(xv, DROP_VALUE).unwrap();
        let grad = g.grad(y.square().unwrap().sum().unwrap(), &[xv]).unwrap().remove(0);
        let grad = grad.value();
        let eps = 1e-2f32;
        for i in (0..x0.numel()).step_by(7) {
            let mut p = x0.clone();
            p.data_mut()[i] += eps;
            let mut m = x0.clone();
            m.data_mut()[i] -= eps;
            let fd = (f(&p) - f(&m)) / (2.0 * eps as f64);
            let an = grad.data()[i] as f64;
            assert!((fd - an).abs() <= 2e-2 * an.abs().max(1.0), "pixel {i}: fd {fd} vs {an}");
        }
    }

    #[test]
    fn draw_length_mismatch_rejected() {
        let g = Graph::new();
        let x = g.constant(input(2));
        let draw = AugmentDraw { brightness: Some(vec![0.1]), ..bare() };
        assert!(matches!(draw.apply(x, DROP_VALUE), Err(GanError::Shape(_))));
    }
}
