use dusty_lidar::{raster_to_points, AngleTable, PointCloud, RasterMap};
use dusty_tensor::rng;
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::chamfer::{cross_distances, union_distances};
use crate::coverage::{cov_mmd, one_nna};
use crate::error::{MetricError, Result};
use crate::fps::fps;
use crate::jsd::{jsd, BevGrid};
use crate::report::{MetricReport, Stat};
use crate::swd::{swd, SwdConfig};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Clouds drawn from each set per run.
    pub clouds: usize,
    /// Points kept per cloud by farthest point sampling.
    pub points: usize,
    pub runs: usize,
    pub seed: u64,
    pub grid: BevGrid,
    pub swd: SwdConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            clouds: 256,
            points: 256,
            runs: 5,
            seed: 0,
            grid: BevGrid::default(),
            swd: SwdConfig::default(),
        }
    }
}

/// Back-projects and subsamples each `(index, raster)`; the sampling seed
/// depends on the index, so a raster gets the same subsample wherever it
/// appears. Clouds with fewer points than the budget keep all of theirs;
/// empty clouds are skipped.
pub fn prepare_clouds(
    rasters: &[(usize, &RasterMap)],
    angles: &AngleTable,
    points: usize,
    seed: u64,
) -> Result<Vec<PointCloud>> {
    let mut out = Vec::with_capacity(rasters.len());
    for &(i, r) in rasters {
        let c = raster_to_points(r, angles)?;
        if c.is_empty() {
            continue;
        }
        let k = points.min(c.len());
        out.push(fps(&c, k, seed.wrapping_add(i as u64))?);
    }
    Ok(out)
}

/// One run of every metric on the given subsets.
pub fn evaluate_once(
    refs: &[(usize, &RasterMap)],
    gens: &[(usize, &RasterMap)],
    angles: &AngleTable,
    cfg: &EvalConfig,
    seed: u64,
) -> Result<[f64; 5]> {
    let rc = prepare_clouds(refs, angles, cfg.points, seed)?;
    let gc = prepare_clouds(gens, angles, cfg.points, seed)?;
    if rc.is_empty() || gc.is_empty() {
        return Err(MetricError::Empty("a set has no measured points".into()));
    }
    let j = jsd(&rc, &gc, &cfg.grid)?;
    let (cov, mmd) = cov_mmd(&cross_distances(&rc, &gc)?)?;
    let nna = one_nna(&union_distances(&rc, &gc)?, rc.len())?;
    let (h, w) = refs[0].1.shape();
    let rv: Vec<&[f32]> = refs.iter().map(|r| r.1.values()).collect();
    let gv: Vec<&[f32]> = gens.iter().map(|r| r.1.values()).collect();
    let s = swd(&rv, &gv, h, w, &SwdConfig { seed, ..cfg.swd })?;
    Ok([j, cov, mmd, nna, s])
}

/// All metrics repeated over `cfg.runs` random subsets; mean ± population std.
pub fn evaluate(refs: &[RasterMap], gens: &[RasterMap], angles: &AngleTable, cfg: &EvalConfig) -> Result<MetricReport> {
    if refs.is_empty() || gens.is_empty() {
        return Err(MetricError::Empty("evaluation needs two nonempty sets".into()));
    }
    if let Some(r) = refs.iter().chain(gens).find(|r| r.shape() != refs[0].shape()) {
        return Err(MetricError::Shape(format!("raster {:?} vs {:?}", r.shape(), refs[0].shape())));
    }
    if cfg.runs == 0 || cfg.clouds == 0 || cfg.points == 0 {
        return Err(MetricError::Config("runs, clouds and points must be positive".into()));
    }
    let mut cols: [Vec<f64>; 5] = Default::default();
    let (nr, ng) = (cfg.clouds.min(refs.len()), cfg.clouds.min(gens.len()));
    for run in 0..cfg.runs {
        let run_seed = cfg.seed.wrapping_add(run as u64);
        let mut pick = rng::stream(run_seed, "eval-subset");
        let mut subset = |n: usize, k: usize| {
            let mut idx = sample(&mut pick, n, k).into_vec();
            idx.sort_unstable();
            idx
        };
        let r_idx = subset(refs.len(), nr);
        // equal-sized sets share one draw, so identical sets compare equal
        let g_idx = if gens.len() == refs.len() { r_idx.clone() } else { subset(gens.len(), ng) };
        let ri: Vec<_> = r_idx.into_iter().map(|i| (i, &refs[i])).collect();
        let gi: Vec<_> = g_idx.into_iter().map(|i| (i, &gens[i])).collect();
        let vals = evaluate_once(&ri, &gi, angles, cfg, run_seed)?;
        for (c, v) in cols.iter_mut().zip(vals) {
            c.push(v);
        }
    }
    Ok(MetricReport {
        jsd: Stat::from_samples(&cols[0]),
        cov: Stat::from_samples(&cols[1]),
        mmd: Stat::from_samples(&cols[2]),
        one_nna: Stat::from_samples(&cols[3]),
        swd: Stat::from_samples(&cols[4]),
        runs: cfg.runs,
        n_ref: nr,
        n_gen: ng,
        points_per_cloud: cfg.points,
        jsd_grid: cfg.grid.label(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use dusty_lidar::{synth_dataset, DropModel};

    #[test]
    fn identical_sets_are_perfect() {
        let scenes = synth_dataset(1, 6, 16, 64, &DropModel::default()).unwrap();
        let rs: Vec<_> = scenes.into_iter().map(|s| s.dropped).collect();
        let cfg = EvalConfig {
            clouds: 6,
            points: 64,
            runs: 2,
            ..Default::default()
        };
        let rep = evaluate(&rs, &rs, &AngleTable::synthetic(16, 64), &cfg).unwrap();
        assert_eq!(rep.cov.mean, 1.0);
        assert_eq!(rep.mmd.mean, 0.0);
        assert_eq!(rep.jsd.mean, 0.0);
        assert!(rep.swd.mean < 1e-6);
    }
}
