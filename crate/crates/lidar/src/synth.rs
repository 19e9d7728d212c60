//! Randomized street scenes rendered by ray casting, with known per-pixel
//! drop probabilities.

use dusty_tensor::rng::{self, Rng};
use rand::Rng as _;

use crate::angles::AngleTable;
use crate::error::{LidarError, Result};
use crate::normalize::{NormalizationSpec, DROP_VALUE};
use crate::raster::RasterMap;

pub const SENSOR_HEIGHT_M: f64 = 1.73;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DropModel {
    /// Every pixel drops with probability `p`.
    Uniform { p: f64 },
    /// `p = clamp(base + offset + slope·d/x_max)`, where `offset` is drawn
    /// once per surface from `U(-spread/2, spread/2)`.
    DepthDependent { base: f64, slope: f64, object_spread: f64 },
}

impl Default for DropModel {
    fn default() -> Self {
        DropModel::DepthDependent {
            base: 0.02,
            slope: 0.4,
            object_spread: 0.3,
        }
    }
}

impl DropModel {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            DropModel::Uniform { p } => (0.0..=1.0).contains(&p),
            DropModel::DepthDependent {
                base,
                slope,
                object_spread,
            } => base.is_finite() && slope.is_finite() && object_spread >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(LidarError::Config(format!("invalid drop model {self:?}")))
        }
    }
}

#[derive(Clone, Debug)]
pub struct SynthScene {
    pub clean: RasterMap,
    pub dropped: RasterMap,
    /// Ground-truth drop probability per pixel.
    pub drop_prob: Vec<f32>,
}

struct Aabb {
    lo: [f64; 3],
    hi: [f64; 3],
}

impl Aabb {
    /// Entry distance along a ray from the origin, by the slab method.
    fn hit(&self, dir: [f64; 3]) -> Option<f64> {
        let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
        for k in 0..3 {
            if dir[k].abs() < 1e-12 {
                if 0.0 < self.lo[k] || 0.0 > self.hi[k] {
                    return None;
                }
                continue;
            }
            let (a, b) = (self.lo[k] / dir[k], self.hi[k] / dir[k]);
            t0 = t0.max(a.min(b));
            t1 = t1.min(a.max(b));
        }
        (t0 <= t1 && t0 > 0.0).then_some(t0)
    }
}

struct Scene {
    left: f64,
    right: f64,
    front: f64,
    back: f64,
    cars: Vec<Aabb>,
}

impl Scene {
    fn random(rng: &mut Rng) -> Self {
        let left = rng.gen_range(4.0..14.0);
        let right = rng.gen_range(4.0..14.0);
        let front = rng.gen_range(25.0..90.0);
        let back = rng.gen_range(25.0..90.0);
        let n_cars = rng.gen_range(0..=6);
        let mut cars = Vec::with_capacity(n_cars);
        for _ in 0..n_cars {
            let len: f64 = rng.gen_range(3.5..5.0);
            let wid: f64 = rng.gen_range(1.6..2.0);
            let hgt: f64 = rng.gen_range(1.4..2.0);
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let cx = sign * rng.gen_range(4.0..35.0);
            let cy = rng.gen_range(-right + 0.5 + wid / 2.0..left - 0.5 - wid / 2.0);
            let z0 = -SENSOR_HEIGHT_M;
            cars.push(Aabb {
                lo: [cx - len / 2.0, cy - wid / 2.0, z0],
                hi: [cx + len / 2.0, cy + wid / 2.0, z0 + hgt],
            });
        }
        Self {
            left,
            right,
            front,
            back,
            cars,
        }
    }

    /// Distance to the first surface and its id. Ids: 0 ground, 1–4 walls,
    /// 5.. cars.
    fn cast(&self, dir: [f64; 3]) -> (f64, usize) {
        let mut best = (f64::INFINITY, usize::MAX);
        let mut consider = |t: f64, id: usize| {
            if t > 0.0 && t < best.0 {
                best = (t, id);
            }
        };
        if dir[2] < 0.0 {
            consider(SENSOR_HEIGHT_M / -dir[2], 0);
        }
        if dir[1] > 0.0 {
            consider(self.left / dir[1], 1);
        } else if dir[1] < 0.0 {
            consider(self.right / -dir[1], 2);
        }
        if dir[0] > 0.0 {
            consider(self.front / dir[0], 3);
        } else if dir[0] < 0.0 {
            consider(self.back / -dir[0], 4);
        }
        for (k, car) in self.cars.iter().enumerate() {
            if let Some(t) = car.hit(dir) {
                consider(t, 5 + k);
            }
        }
        best
    }
}

/// One scene seen by the idealized scanner of [`AngleTable::synthetic`].
pub fn synth_scene(seed: u64, height: usize, width: usize, model: &DropModel) -> Result<SynthScene> {
    let angles = AngleTable::synthetic(height, width);
    let mut rng = rng::stream(seed, "scene");
    synth_scene_with(&mut rng, &angles, NormalizationSpec::default(), model)
}

/// `count` scenes drawn in sequence from one stream.
pub fn synth_dataset(
    seed: u64,
    count: usize,
    height: usize,
    width: usize,
    model: &DropModel,
) -> Result<Vec<SynthScene>> {
    let angles = AngleTable::synthetic(height, width);
    let mut rng = rng::stream(seed, "scene");
    (0..count)
        .map(|_| synth_scene_with(&mut rng, &angles, NormalizationSpec::default(), model))
        .collect()
}

pub fn synth_scene_with(
    rng: &mut Rng,
    angles: &AngleTable,
    norm: NormalizationSpec,
    model: &DropModel,
) -> Result<SynthScene> {
    model.validate()?;
    let scene = Scene::random(rng);
    let n_surfaces = 5 + scene.cars.len();
    let offsets: Vec<f64> = match *model {
        DropModel::DepthDependent { object_spread, .. } => (0..n_surfaces)
            .map(|_| (rng.gen::<f64>() - 0.5) * object_spread)
            .collect(),
        DropModel::Uniform { .. } => vec![0.0; n_surfaces],
    };

    let n = angles.height * angles.width;
    let mut clean = Vec::with_capacity(n);
    let mut dropped = Vec::with_capacity(n);
    let mut drop_prob = Vec::with_capacity(n);
    for i in 0..n {
        let (el, az) = (angles.elevation[i] as f64, angles.azimuth[i] as f64);
        let dir = [el.cos() * az.cos(), el.cos() * az.sin(), el.sin()];
        let (t, id) = scene.cast(dir);
        let d = t.clamp(norm.x_min_m as f64, norm.x_max_m as f64);
        let v = norm.normalize(d as f32);
        let p = match *model {
            DropModel::Uniform { p } => p,
            DropModel::DepthDependent { base, slope, .. } => {
                (base + offsets[id] + slope * d / norm.x_max_m as f64).clamp(0.0, 1.0)
            }
        };
        clean.push(v);
        // Always draw, so the clean scene sequence doesn't depend on p.
        let u: f64 = rng.gen();
        dropped.push(if u < p { DROP_VALUE } else { v });
        drop_prob.push(p as f32);
    }
    Ok(SynthScene {
        clean: RasterMap::new(angles.height, angles.width, clean, norm)?,
        dropped: RasterMap::new(angles.height, angles.width, dropped, norm)?,
        drop_prob,
    })
}
