//! Latent-code recovery by masked-L1 descent with annealed latent noise.
//!
//! Each iteration evaluates the decoder at `project(z + σ(t)·ε)`, takes an
//! Adam step on `z` with that gradient and projects `z` back onto the
//! constraint set. `t` falls linearly from 1 to 0 and `σ(t) = scale·t²`, so
//! the last evaluation is noise free. Noise never persists in `z`.
//!
//! Many targets are inverted at once as rows of one batch. Adam is
//! elementwise and the loss is a sum of per-target terms, so every row
//! follows exactly the trajectory it would follow alone.

use dusty_lidar::RasterMap;
use dusty_tensor::{rng, Graph, Tensor};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::decoder::LatentDecoder;
use crate::error::{InversionError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Constraint {
    Free,
    /// `‖z‖ = √d`
    Sphere,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InversionConfig {
    pub iterations: usize,
    pub lr: f64,
    /// Noise std at `t = 1`.
    pub noise_scale: f64,
    pub constraint: Constraint,
    pub seed: u64,
    /// Independent starting points per target; the best final loss wins.
    pub restarts: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for InversionConfig {
    fn default() -> Self {
        InversionConfig {
            iterations: 1000,
            lr: 0.1,
            noise_scale: 0.05,
            constraint: Constraint::Sphere,
            seed: 0,
            restarts: 1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl InversionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(InversionError::Config("iterations must be >= 1".into()));
        }
        if self.restarts == 0 {
            return Err(InversionError::Config("restarts must be >= 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(InversionError::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(InversionError::Config(format!("noise_scale must be >= 0, got {}", self.noise_scale)));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2) && self.eps > 0.0) {
            return Err(InversionError::Config("adam betas must lie in [0, 1) and eps > 0".into()));
        }
        Ok(())
    }

    /// Latent noise std at iteration `i`.
    pub fn sigma(&self, i: usize) -> f64 {
        let t = if self.iterations == 1 {
            0.0
        } else {
            1.0 - i as f64 / (self.iterations - 1) as f64
        };
        self.noise_scale * t * t
    }
}

/// Outcome for one target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Inversion {
    /// Best evaluated latent.
    pub latent: Vec<f64>,
    /// Dense decoder output at `latent`, row-major `H×W`.
    pub dense: Vec<f32>,
    /// Composed output at `latent` (equal to `dense` for decoders without
    /// a drop model).
    pub composed: Vec<f32>,
    /// Masked L1 at every evaluated point.
    pub loss_curve: Vec<f64>,
    pub best_loss: f64,
    pub best_iteration: usize,
    /// Worst `|‖z‖ − √d|` over every projected latent, 0 when unconstrained.
    pub max_norm_error: f64,
    pub restart: usize,
}

impl Inversion {
    pub fn running_min(&self) -> Vec<f64> {
        let mut best = f64::INFINITY;
        self.loss_curve
            .iter()
            .map(|&l| {
                best = best.min(l);
                best
            })
            .collect()
    }
}

/// Per-pixel weights `1/count` on measured pixels and target values with
/// dropped pixels replaced by 0, so dropped values never reach the loss.
fn target_terms(target: &RasterMap) -> Result<(Vec<f32>, Vec<f32>)> {
    let count = target.measured_count();
    if count == 0 {
        return Err(InversionError::NoMeasurements);
    }
    let w = 1.0 / count as f32;
    let mut weights = Vec::with_capacity(target.values().len());
    let mut values = Vec::with_capacity(target.values().len());
    for (i, &v) in target.values().iter().enumerate() {
        let m = target.is_measured(i);
        weights.push(if m { w } else { 0.0 });
        values.push(if m { v } else { 0.0 });
    }
    Ok((weights, values))
}

/// Masked mean absolute error between a dense output and a target.
pub fn masked_l1(dense: &[f32], target: &RasterMap) -> Result<f64> {
    if dense.len() != target.values().len() {
        return Err(InversionError::Shape(format!("{} outputs for {} pixels", dense.len(), target.values().len())));
    }
    let (weights, values) = target_terms(target)?;
    Ok(row_losses(dense, &weights, &values, 1)[0])
}

fn row_losses(dense: &[f32], weights: &[f32], values: &[f32], rows: usize) -> Vec<f64> {
    let plane = dense.len() / rows;
    (0..rows)
        .map(|r| {
            let s = r * plane;
            (s..s + plane)
                .map(|i| weights[i] as f64 * (dense[i] - values[i]).abs() as f64)
                .sum()
        })
        .collect()
}

fn project(z: &mut [f64], constraint: Constraint) -> f64 {
    match constraint {
        Constraint::Free => 0.0,
        Constraint::Sphere => {
            let d = z.len() as f64;
            let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                let s = d.sqrt() / norm;
                z.iter_mut().for_each(|v| *v *= s);
            } else {
                z.iter_mut().for_each(|v| *v = 1.0);
            }
            (z.iter().map(|v| v * v).sum::<f64>().sqrt() - d.sqrt()).abs()
        }
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn step(&mut self, z: &mut [f64], grad: &[f64], cfg: &InversionConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for i in 0..z.len() {
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * grad[i];
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            z[i] -= cfg.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + cfg.eps);
        }
    }
}

/// Inverts a single target.
pub fn invert<D: LatentDecoder + ?Sized>(
    decoder: &D,
    target: &RasterMap,
    cfg: &InversionConfig,
) -> Result<Inversion> {
    Ok(invert_batch(decoder, std::slice::from_ref(target), cfg)?.remove(0))
}

/// Inverts every target; target `b` uses RNG streams keyed by `b`.
pub fn invert_batch<D: LatentDecoder + ?Sized>(
    decoder: &D,
    targets: &[RasterMap],
    cfg: &InversionConfig,
) -> Result<Vec<Inversion>> {
    cfg.validate()?;
    if targets.is_empty() {
        return Ok(Vec::new());
    }
    let (h, w) = decoder.shape();
    let d = decoder.latent_dim();
    let plane = h * w;
    let mut weights = Vec::new();
    let mut values = Vec::new();
    for t in targets {
        if t.shape() != (h, w) {
            return Err(InversionError::Shape(format!("target {:?}, decoder emits {:?}", t.shape(), (h, w))));
        }
        let (tw, tv) = target_terms(t)?;
        weights.extend(tw);
        values.extend(tv);
    }
    let n_t = targets.len();
    // rows are restart-major: row = restart * n_t + target
    let rows = n_t * cfg.restarts;
    let weights = weights.repeat(cfg.restarts);
    let values = values.repeat(cfg.restarts);
    let weight_t = Tensor::new([rows, 1, h, w], weights.clone())?;
    let value_t = Tensor::new([rows, 1, h, w], values.clone())?;

    let mut z = vec![0.0f64; rows * d];
    let mut noise_rngs = Vec::with_capacity(rows);
    let mut max_norm_error = vec![0.0f64; rows];
    for r in 0..cfg.restarts {
        for b in 0..n_t {
            let row = r * n_t + b;
            let mut init = rng::stream(cfg.seed, &format!("inversion/init/{b}/{r}"));
            let zr = &mut z[row * d..(row + 1) * d];
            for v in zr.iter_mut() {
                *v = StandardNormal.sample(&mut init);
            }
            max_norm_error[row] = project(zr, cfg.constraint);
            noise_rngs.push(rng::stream(cfg.seed, &format!("inversion/noise/{b}/{r}")));
        }
    }
    let mut adam = Adam { m: vec![0.0; z.len()], v: vec![0.0; z.len()], t: 0 };
    let mut curves = vec![Vec::with_capacity(cfg.iterations); rows];
    let mut best: Vec<(f64, usize, Vec<f64>)> = vec![(f64::INFINITY, 0, Vec::new()); rows];

    for i in 0..cfg.iterations {
        let sigma = cfg.sigma(i);
        let mut probe = z.clone();
        for (row, rng) in noise_rngs.iter_mut().enumerate() {
            let zr = &mut probe[row * d..(row + 1) * d];
            if sigma > 0.0 {
                for v in zr.iter_mut() {
                    let e: f64 = StandardNormal.sample(rng);
                    *v += sigma * e;
                }
            }
            let err = project(zr, cfg.constraint);
            max_norm_error[row] = max_norm_error[row].max(err);
        }

        let graph = Graph::new();
        let zv = graph.param(Tensor::new([rows, d], probe.iter().map(|&v| v as f32).collect())?);
        let dense = decoder.decode(zv)?;
        if dense.shape() != [rows, 1, h, w] {
            return Err(InversionError::Shape(format!("decoder produced {:?}", dense.shape())));
        }
        let losses = row_losses(dense.value().data(), &weights, &values, rows);
        let loss = dense.sub(graph.constant(value_t.clone()))?.abs()?.mul_const(weight_t.clone())?.sum()?;
        let grad = graph.grad(loss, &[zv])?.remove(0);
        let grad: Vec<f64> = grad.value().data().iter().map(|&g| g as f64).collect();

        for row in 0..rows {
            curves[row].push(losses[row]);
            if losses[row] < best[row].0 {
                best[row] = (losses[row], i, probe[row * d..(row + 1) * d].to_vec());
            }
        }
        adam.step(&mut z, &grad, cfg);
        for row in 0..rows {
            let err = project(&mut z[row * d..(row + 1) * d], cfg.constraint);
            max_norm_error[row] = max_norm_error[row].max(err);
        }
        if !z.iter().all(|v| v.is_finite()) {
            return Err(InversionError::Config(format!("latent diverged at iteration {i}")));
        }
    }

    // pick the best restart per target
    let winners: Vec<usize> = (0..n_t)
        .map(|b| {
            (0..cfg.restarts)
                .map(|r| r * n_t + b)
                .min_by(|&x, &y| best[x].0.total_cmp(&best[y].0))
                .expect("restarts >= 1")
        })
        .collect();
    let zs: Vec<f32> = winners.iter().flat_map(|&row| best[row].2.iter().map(|&v| v as f32)).collect();
    let zt = Tensor::new([n_t, d], zs)?;
    let graph = Graph::new();
    let dense = (*decoder.decode(graph.constant(zt.clone()))?.value()).clone();
    let composed = decoder.compose(&zt, cfg.seed)?;
    Ok(winners
        .iter()
        .enumerate()
        .map(|(b, &row)| {
            let (best_loss, best_iteration, latent) = best[row].clone();
            Inversion {
                latent,
                dense: dense.data()[b * plane..(b + 1) * plane].to_vec(),
                composed: composed.data()[b * plane..(b + 1) * plane].to_vec(),
                loss_curve: std::mem::take(&mut curves[row]),
                best_loss,
                best_iteration,
                max_norm_error: max_norm_error[row],
                restart: row / n_t,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::LinearDecoder;
    use dusty_lidar::{NormalizationSpec, DROP_VALUE};

    fn decoder() -> LinearDecoder {
        let a = Tensor::randn([24, 4], &mut rng::stream(5, "a")).map(|v| 0.2 * v);
        LinearDecoder::new(4, 6, a).unwrap()
    }

    fn target(values: Vec<f32>) -> RasterMap {
        RasterMap::new(4, 6, values, NormalizationSpec::default()).unwrap()
    }

    fn some_target() -> RasterMap {
        target((0..24).map(|i| ((i * 7 % 11) as f32 / 11.0) - 0.5).collect())
    }

    #[test]
    fn schedule_endpoints() {
        let cfg = InversionConfig::default();
        assert_eq!(cfg.sigma(0), 0.05);
        assert_eq!(cfg.sigma(999), 0.0);
        assert!(cfg.sigma(500) < cfg.sigma(499));
        let one = InversionConfig { iterations: 1, ..cfg };
        assert_eq!(one.sigma(0), 0.0);
    }

    #[test]
    fn sphere_norm_holds_and_best_so_far_is_monotone() {
        let cfg = InversionConfig { iterations: 60, ..Default::default() };
        let inv = invert(&decoder(), &some_target(), &cfg).unwrap();
        assert!(inv.max_norm_error < 1e-6);
        let norm = inv.latent.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 2.0).abs() < 1e-6);
        assert_eq!(inv.loss_curve.len(), 60);
        assert!(inv.running_min().windows(2).all(|p| p[1] <= p[0]));
        assert_eq!(inv.best_loss, inv.loss_curve[inv.best_iteration]);
        assert_eq!(inv.best_loss, *inv.running_min().last().unwrap());
        let recomputed = masked_l1(&inv.dense, &some_target()).unwrap();
        assert!((recomputed - inv.best_loss).abs() < 1e-12);
    }

    #[test]
    fn dropped_target_values_do_not_matter() {
        // the same measured pixels behind two different drop values
        let base = some_target().values().to_vec();
        let mut a = base.clone();
        let mut b = base;
        for i in [1, 5, 9, 20] {
            a[i] = DROP_VALUE;
            b[i] = 0.7;
        }
        let ta = target(a);
        let tb = RasterMap::with_drop_value(4, 6, b, 0.7, NormalizationSpec::default()).unwrap();
        let cfg = InversionConfig { iterations: 30, ..Default::default() };
        let ia = invert(&decoder(), &ta, &cfg).unwrap();
        let ib = invert(&decoder(), &tb, &cfg).unwrap();
        assert_eq!(ia.loss_curve, ib.loss_curve);
        assert_eq!(ia.latent, ib.latent);
    }

    #[test]
    fn batch_rows_match_single_runs() {
        let t0 = some_target();
        let t1 = target(t0.values().iter().map(|v| -v).collect());
        let cfg = InversionConfig { iterations: 25, restarts: 2, ..Default::default() };
        let batch = invert_batch(&decoder(), &[t0.clone(), t1], &cfg).unwrap();
        let single = invert(&decoder(), &t0, &cfg).unwrap();
        assert_eq!(batch[0], single);
    }

    #[test]
    fn preconditions() {
        let dec = decoder();
        let cfg = InversionConfig { iterations: 3, ..Default::default() };
        let empty = target(vec![DROP_VALUE; 24]);
        assert!(matches!(invert(&dec, &empty, &cfg), Err(InversionError::NoMeasurements)));
        let wrong = RasterMap::new(6, 4, vec![0.0; 24], NormalizationSpec::default()).unwrap();
        assert!(matches!(invert(&dec, &wrong, &cfg), Err(InversionError::Shape(_))));
        let zero = InversionConfig { iterations: 0, ..Default::default() };
        assert!(matches!(invert(&dec, &some_target(), &zero), Err(InversionError::Config(_))));
    }

    #[test]
    fn free_constraint_leaves_norm_alone() {
        let cfg = InversionConfig { iterations: 40, constraint: Constraint::Free, noise_scale: 0.0, ..Default::default() };
        let inv = invert(&decoder(), &some_target(), &cfg).unwrap();
        assert_eq!(inv.max_norm_error, 0.0);
        assert!(inv.best_loss < inv.loss_curve[0]);
    }
}
