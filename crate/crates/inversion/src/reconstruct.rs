//! Corrupt, invert and score against the clean target.

use dusty_lidar::RasterMap;
use dusty_metrics::{depth_errors, DepthErrorReport};
use serde::Serialize;

use crate::corrupt::{corrupt, CorruptionSpec};
use crate::decoder::LatentDecoder;
use crate::error::{InversionError, Result};
use crate::invert::{invert_batch, Inversion, InversionConfig};

#[derive(Clone, Debug, Serialize)]
pub struct Reconstruction {
    #[serde(skip)]
    pub target: RasterMap,
    #[serde(skip)]
    pub corrupted: RasterMap,
    /// Dense output as a raster (values clamped to `[-1, 1]`).
    #[serde(skip)]
    pub dense: RasterMap,
    #[serde(skip)]
    pub composed: RasterMap,
    pub inversion: Inversion,
    /// Dense output against the clean target on the target's measured pixels.
    pub errors: DepthErrorReport,
}

impl Reconstruction {
    /// Target, corrupted input, dense and composed output, in that order.
    pub fn panel(&self) -> [&RasterMap; 4] {
        [&self.target, &self.corrupted, &self.dense, &self.composed]
    }
}

fn as_raster(like: &RasterMap, values: &[f32]) -> Result<RasterMap> {
    Ok(like.with_values(values.to_vec())?)
}

/// Corrupts each target with `spec` (target `b` uses seed `spec.seed + b`),
/// inverts the corrupted rasters and scores the dense outputs.
pub fn reconstruct_batch<D: LatentDecoder + ?Sized>(
    decoder: &D,
    targets: &[RasterMap],
    spec: &CorruptionSpec,
    cfg: &InversionConfig,
) -> Result<Vec<Reconstruction>> {
    let corrupted = targets
        .iter()
        .enumerate()
        .map(|(b, t)| corrupt(t, &CorruptionSpec { seed: spec.seed.wrapping_add(b as u64), ..*spec }))
        .collect::<Result<Vec<_>>>()?;
    let inversions = invert_batch(decoder, &corrupted, cfg)?;
    targets
        .iter()
        .zip(corrupted)
        .zip(inversions)
        .map(|((target, corrupted), inversion)| {
            let dense = as_raster(target, &inversion.dense)?;
            let composed = as_raster(target, &inversion.composed)?;
            let errors = depth_errors(&dense, target)?;
            Ok(Reconstruction { target: target.clone(), corrupted, dense, composed, inversion, errors })
        })
        .collect()
}

pub fn reconstruct_corrupted<D: LatentDecoder + ?Sized>(
    decoder: &D,
    target: &RasterMap,
    spec: &CorruptionSpec,
    cfg: &InversionConfig,
) -> Result<Reconstruction> {
    Ok(reconstruct_batch(decoder, std::slice::from_ref(target), spec, cfg)?.remove(0))
}

/// Index of the training raster closest to `query` in mean absolute
/// difference over the query's measured pixels.
pub fn nearest_neighbor(query: &RasterMap, pool: &[RasterMap]) -> Result<usize> {
    let measured: Vec<usize> = (0..query.values().len()).filter(|&i| query.is_measured(i)).collect();
    if measured.is_empty() {
        return Err(InversionError::NoMeasurements);
    }
    let mut best: Option<(f64, usize)> = None;
    for (j, cand) in pool.iter().enumerate() {
        if cand.shape() != query.shape() {
            return Err(InversionError::Shape(format!("pool raster {:?} vs query {:?}", cand.shape(), query.shape())));
        }
        let dist: f64 = measured
            .iter()
            .map(|&i| (query.values()[i] - cand.values()[i]).abs() as f64)
            .sum();
        if best.map_or(true, |(b, _)| dist < b) {
            best = Some((dist, j));
        }
    }
    best.map(|(_, j)| j).ok_or_else(|| InversionError::Config("empty training pool".into()))
}

/// Errors of the nearest training raster against the clean target.
pub fn nearest_neighbor_errors(
    target: &RasterMap,
    corrupted: &RasterMap,
    pool: &[RasterMap],
) -> Result<(usize, DepthErrorReport)> {
    let j = nearest_neighbor(corrupted, pool)?;
    Ok((j, depth_errors(&pool[j], target)?))
}
