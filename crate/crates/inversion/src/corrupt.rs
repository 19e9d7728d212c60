//! Synthetic corruptions of measured rasters.

use dusty_lidar::RasterMap;
use dusty_tensor::rng;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{InversionError, Result};

/// Where additive noise is applied.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseSpace {
    /// Normalized inverse depth.
    #[default]
    Normalized,
    /// Metric distance in meters, clamped to the sensor range before
    /// renormalizing.
    Metric,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Corruption {
    /// Drops each measured pixel independently with probability `p`.
    RandomDrop { p: f64 },
    /// Keeps rows `floor(i·H/k)` for `i < k`, drops the rest.
    KeepLines { k: usize },
    /// Adds `N(0, variance)` to measured pixels.
    Noise {
        variance: f64,
        #[serde(default)]
        space: NoiseSpace,
    },
}

impl Corruption {
    pub const DEFAULT_DROP_P: f64 = 0.9;
    pub const DEFAULT_NOISE_VARIANCE: f64 = 0.01;
    /// Kept lines per 64 rows.
    pub const DEFAULT_KEEP_PER_64: usize = 8;

    pub fn random_drop() -> Self {
        Corruption::RandomDrop { p: Self::DEFAULT_DROP_P }
    }

    /// 8 of every 64 rows, at least one.
    pub fn keep_lines(height: usize) -> Self {
        Corruption::KeepLines { k: (height * Self::DEFAULT_KEEP_PER_64 / 64).max(1) }
    }

    pub fn noise() -> Self {
        Corruption::Noise { variance: Self::DEFAULT_NOISE_VARIANCE, space: NoiseSpace::Normalized }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Corruption::RandomDrop { .. } => "random-drop",
            Corruption::KeepLines { .. } => "keep-lines",
            Corruption::Noise { .. } => "noise",
        }
    }

    /// Parses `random-drop:P`, `keep-lines:K` or `noise:VAR[:metric]`.
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |i: usize| -> Result<f64> {
            parts
                .get(i)
                .ok_or_else(|| InversionError::Config(format!("{s:?} is missing a parameter")))?
                .parse::<f64>()
                .map_err(|e| InversionError::Config(format!("{s:?}: {e}")))
        };
        let c = match (parts[0], parts.len()) {
            ("random-drop", 2) => Corruption::RandomDrop { p: num(1)? },
            ("keep-lines", 2) => {
                let k = num(1)?;
                if k.fract() != 0.0 || k < 0.0 {
                    return Err(InversionError::Config(format!("keep-lines count {k} is not an integer")));
                }
                Corruption::KeepLines { k: k as usize }
            }
            ("noise", 2) => Corruption::Noise { variance: num(1)?, space: NoiseSpace::Normalized },
            ("noise", 3) => {
                let space = match parts[2] {
                    "normalized" => NoiseSpace::Normalized,
                    "metric" => NoiseSpace::Metric,
                    other => return Err(InversionError::Config(format!("unknown noise space {other:?}"))),
                };
                Corruption::Noise { variance: num(1)?, space }
            }
            _ => {
                return Err(InversionError::Config(format!(
                    "unknown corruption {s:?} (random-drop:P | keep-lines:K | noise:VAR[:metric])"
                )))
            }
        };
        Ok(c)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub corruption: Corruption,
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn new(corruption: Corruption, seed: u64) -> Self {
        CorruptionSpec { corruption, seed }
    }

    pub fn validate(&self, height: usize) -> Result<()> {
        match self.corruption {
            Corruption::RandomDrop { p } if !(0.0..=1.0).contains(&p) => {
                Err(InversionError::Config(format!("drop probability {p} outside [0, 1]")))
            }
            Corruption::KeepLines { k } if k == 0 || k > height => {
                Err(InversionError::Config(format!("keep-lines k = {k} outside [1, {height}]")))
            }
            Corruption::Noise { variance, .. } if !(variance >= 0.0 && variance.is_finite()) => {
                Err(InversionError::Config(format!("noise variance {variance} must be >= 0")))
            }
            _ => Ok(()),
        }
    }
}

/// Rows retained by a keep-lines corruption.
pub fn kept_rows(height: usize, k: usize) -> Vec<usize> {
    (0..k).map(|i| i * height / k).collect()
}

pub fn corrupt(x: &RasterMap, spec: &CorruptionSpec) -> Result<RasterMap> {
    let (h, w) = x.shape();
    spec.validate(h)?;
    let alpha = x.drop_value();
    let mut values = x.values().to_vec();
    let mut rng = rng::stream(spec.seed, &format!("corrupt/{}", spec.corruption.name()));
    match spec.corruption {
        Corruption::RandomDrop { p } => {
            for v in values.iter_mut() {
                // one draw per pixel keeps the mask independent of the values
                let u: f64 = rng.gen();
                if *v != alpha && u < p {
                    *v = alpha;
                }
            }
        }
        Corruption::KeepLines { k } => {
            let keep = kept_rows(h, k);
            for r in (0..h).filter(|r| !keep.contains(r)) {
                values[r * w..(r + 1) * w].fill(alpha);
            }
        }
        Corruption::Noise { variance, space } => {
            let normal = Normal::new(0.0, variance.sqrt()).expect("variance validated");
            let norm = x.norm();
            for v in values.iter_mut() {
                let e: f64 = normal.sample(&mut rng);
                if *v == alpha {
                    continue;
                }
                *v = match space {
                    NoiseSpace::Normalized => (*v as f64 + e) as f32,
                    NoiseSpace::Metric => {
                        let d = (norm.denormalize(*v) as f64 + e).clamp(norm.x_min_m as f64, norm.x_max_m as f64);
                        norm.normalize(d as f32)
                    }
                }
                .clamp(-1.0, 1.0);
            }
        }
    }
    Ok(x.with_values(values)?)
}
