use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use dusty_gan::export::grid_image;
use dusty_gan::train::checkpoint_config;
use dusty_gan::{
    load_generator, rasters_to_tensor, sample_latents, tensor_to_rasters, train, RunDir, SamplerMode,
    TrainConfig, Trainer, Variant,
};
use dusty_inversion::{
    masked_l1, nearest_neighbor, reconstruct_batch, reconstruct_corrupted, Constraint, Corruption, CorruptionSpec,
    GanDecoder, InversionConfig, Reconstruction,
};
use dusty_lidar::io::{load_angle_table, load_batch, load_raster, save_angle_table, save_batch, save_raster};
use dusty_lidar::{raster_to_points, synth_dataset, write_ply, AngleTable, DropModel, RasterMap};
use dusty_metrics::tolerance::{apply_threshold, report_score};
use dusty_metrics::{depth_errors, evaluate, tune_tolerance, DepthErrorReport, EvalConfig, ToleranceConfig};
use dusty_tensor::{rng, Checkpoint};
use serde::Serialize;
use serde_json::{json, Value};

use crate::args::*;
use crate::exit::ConfigError;

/// What a command reports back for its manifest.
pub struct Outcome {
    pub config: Value,
    pub seeds: Value,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
}

pub struct Ctx {
    pub out_dir: PathBuf,
    pub seed: Option<u64>,
    pub config: Option<PathBuf>,
}

impl Ctx {
    fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }
}

fn config_err(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn load_rasters(path: &Path) -> Result<Vec<RasterMap>> {
    load_batch(path).with_context(|| format!("loading raster batch {}", path.display()))
}

fn stack(rasters: &[RasterMap]) -> Result<dusty_tensor::Tensor> {
    Ok(rasters_to_tensor(&rasters.iter().collect::<Vec<_>>())?)
}

fn save_panel(path: &Path, rasters: &[&RasterMap], cols: usize) -> Result<()> {
    let x = rasters_to_tensor(rasters)?;
    grid_image(&x, cols)?.save(path).with_context(|| format!("writing {}", path.display()))
}

pub fn synth(ctx: &Ctx, a: &SynthArgs) -> Result<Outcome> {
    let model = match a.uniform_drop {
        Some(p) => DropModel::Uniform { p },
        None => DropModel::default(),
    };
    let seed = ctx.seed();
    let scenes = synth_dataset(seed, a.count, a.height, a.width, &model)?;
    let norm = dusty_lidar::NormalizationSpec::default();
    let mut dropped = Vec::with_capacity(scenes.len());
    let mut clean = Vec::with_capacity(scenes.len());
    let mut probs = Vec::with_capacity(scenes.len());
    for s in scenes {
        probs.push(RasterMap::new(a.height, a.width, s.drop_prob, norm)?);
        dropped.push(s.dropped);
        clean.push(s.clean);
    }
    let outputs = vec![
        ctx.path("dataset.dstb"),
        ctx.path("clean.dstb"),
        ctx.path("drop_prob.dstb"),
        ctx.path("angles.dsta"),
    ];
    save_batch(&outputs[0], &dropped)?;
    save_batch(&outputs[1], &clean)?;
    save_batch(&outputs[2], &probs)?;
    save_angle_table(&outputs[3], &AngleTable::synthetic(a.height, a.width))?;
    let rate = if dropped.is_empty() {
        0.0
    } else {
        dropped.iter().map(RasterMap::drop_rate).sum::<f64>() / dropped.len() as f64
    };
    println!("{} scenes, mean drop rate {rate:.4}", dropped.len());
    Ok(Outcome {
        config: json!({ "count": a.count, "height": a.height, "width": a.width, "drop_model": format!("{model:?}") }),
        seeds: json!({ "run": seed, "streams": ["scene"] }),
        inputs: vec![],
        outputs,
    })
}

fn train_config(ctx: &Ctx, a: &TrainArgs, resumed: Option<&Checkpoint>) -> Result<TrainConfig> {
    let mut cfg = match (&ctx.config, resumed) {
        (Some(path), _) => TrainConfig::load(path).with_context(|| format!("loading config {}", path.display()))?,
        (None, Some(ck)) => checkpoint_config(ck)?,
        (None, None) => TrainConfig::desk(),
    };
    if let Some(seed) = ctx.seed {
        cfg.seed = seed;
    }
    Ok(cfg.with_overrides(&a.overrides)?)
}

pub fn train_cmd(ctx: &Ctx, a: &TrainArgs) -> Result<Outcome> {
    let resumed = a.resume.as_deref().map(load_checkpoint).transpose()?;
    let cfg = train_config(ctx, a, resumed.as_ref())?;
    let data = load_rasters(&a.data)?;
    if data.is_empty() {
        return Err(config_err(format!("{} holds no rasters", a.data.display())));
    }
    let mut trainer = match resumed {
        Some(mut ck) => {
            if checkpoint_config(&ck)?.net() != cfg.net() {
                return Err(config_err("network settings differ from the resumed checkpoint"));
            }
            ck.header.meta = json!({ "config": serde_json::to_value(&cfg)? });
            Trainer::from_checkpoint(&ck)?
        }
        None => Trainer::new(cfg.clone())?,
    };
    let start = trainer.step();
    let run = RunDir::create(&ctx.out_dir)?;
    let summary = train(&mut trainer, &data, Some(&run))?;
    if let Some(last) = summary.history.last() {
        println!(
            "trained steps {start}..{}: loss_d {:.4} loss_g {:.4} drop real {:.3} fake {:.3}",
            summary.steps, last.loss_d, last.loss_g, last.real_drop_rate, last.fake_drop_rate
        );
    } else {
        println!("nothing to do: checkpoint already at step {}", summary.steps);
    }
    let mut inputs = vec![a.data.clone()];
    inputs.extend(a.resume.clone());
    Ok(Outcome {
        config: serde_json::to_value(&cfg)?,
        seeds: json!({ "run": cfg.seed, "streams": ["init/generator", "init/discriminator", "data", "latent", "gumbel", "augment", "grid"] }),
        inputs,
        outputs: vec![run.log(), run.latest()],
    })
}

fn mode(m: ModeArg) -> SamplerMode {
    match m {
        ModeArg::Train => SamplerMode::Train,
        ModeArg::Test => SamplerMode::Test,
        ModeArg::Deterministic => SamplerMode::Deterministic,
    }
}

fn variant(v: VariantArg) -> Variant {
    match v {
        VariantArg::Baseline => Variant::Baseline,
        VariantArg::Dusty1 => Variant::Dusty1,
        VariantArg::Dusty2 => Variant::Dusty2,
    }
}

/// Samples `n` rasters with the EMA generator; latents come from stream
/// `latent`, Gumbel noise from `gumbel`.
fn sample(ck: &Checkpoint, n: usize, m: SamplerMode, seed: u64) -> Result<(TrainConfig, Vec<RasterMap>)> {
    let trainer = Trainer::from_checkpoint(ck)?;
    let cfg = trainer.config().clone();
    let z = sample_latents(n, cfg.latent_dim, &mut rng::stream(seed, "latent"));
    let x = trainer.sample(&z, m, seed)?;
    Ok((cfg, tensor_to_rasters(&x, dusty_lidar::NormalizationSpec::default())?))
}

pub fn generate(ctx: &Ctx, a: &GenerateArgs) -> Result<Outcome> {
    if a.n == 0 {
        return Err(config_err("n must be positive"));
    }
    let ck = load_checkpoint(&a.checkpoint)?;
    let cfg = checkpoint_config(&ck)?;
    if let Some(v) = a.variant.map(variant) {
        if v != cfg.variant {
            return Err(config_err(format!("checkpoint holds {:?}, expected {v:?}", cfg.variant)));
        }
    }
    let seed = ctx.seed();
    let (cfg, rasters) = sample(&ck, a.n, mode(a.mode), seed)?;
    let mut outputs = vec![ctx.path("samples.dstb"), ctx.path("samples.png")];
    save_batch(&outputs[0], &rasters)?;
    grid_image(&stack(&rasters)?, 4)?.save(&outputs[1])?;
    if !a.no_clouds {
        let dir = ctx.path("clouds");
        fs::create_dir_all(&dir)?;
        let angles = AngleTable::synthetic(cfg.height, cfg.width);
        for (i, r) in rasters.iter().enumerate() {
            let cloud = raster_to_points(r, &angles)?;
            let path = dir.join(format!("sample_{i:05}.ply"));
            write_ply(&cloud, fs::File::create(&path)?)?;
        }
        outputs.push(dir);
    }
    let rate = rasters.iter().map(RasterMap::drop_rate).sum::<f64>() / rasters.len() as f64;
    println!("{} samples ({:?}), mean drop rate {rate:.4}", rasters.len(), cfg.variant);
    Ok(Outcome {
        config: json!({ "n": a.n, "mode": a.mode, "variant": cfg.variant, "train_config": cfg }),
        seeds: json!({ "run": seed, "streams": ["latent", "gumbel"] }),
        inputs: vec![a.checkpoint.clone()],
        outputs,
    })
}

pub fn evaluate_cmd(ctx: &Ctx, a: &EvaluateArgs) -> Result<Outcome> {
    let refs = load_rasters(&a.reference)?;
    let gens = load_rasters(&a.generated)?;
    let Some(first) = refs.first() else {
        return Err(config_err("reference set is empty"));
    };
    let angles = match &a.angles {
        Some(p) => load_angle_table(p).with_context(|| format!("loading angles {}", p.display()))?,
        None => AngleTable::synthetic(first.height(), first.width()),
    };
    let cfg = EvalConfig { clouds: a.clouds, points: a.points, runs: a.runs, seed: ctx.seed(), ..Default::default() };
    let report = evaluate(&refs, &gens, &angles, &cfg)?;
    let outputs = vec![ctx.path("report.json"), ctx.path("report.csv")];
    fs::write(&outputs[0], report.to_json()?)?;
    fs::write(&outputs[1], report.to_csv()?)?;
    println!("{}", report.to_json()?);
    let mut inputs = vec![a.reference.clone(), a.generated.clone()];
    inputs.extend(a.angles.clone());
    Ok(Outcome {
        config: serde_json::to_value(cfg)?,
        seeds: json!({ "run": cfg.seed, "streams": ["eval-subset", "fps", "swd"] }),
        inputs,
        outputs,
    })
}

pub fn tune_tol(ctx: &Ctx, a: &TuneTolArgs) -> Result<Outcome> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let refs = load_rasters(&a.reference)?;
    let seed = ctx.seed();
    let (cfg, gens) = sample(&ck, a.n, SamplerMode::Test, seed)?;
    let angles = AngleTable::synthetic(cfg.height, cfg.width);
    let eval = EvalConfig { clouds: a.clouds, points: a.points, runs: a.runs, seed, ..Default::default() };
    let tcfg = ToleranceConfig { lower: a.lower, upper: a.upper, trials: a.trials, seed };
    let result = tune_tolerance(&tcfg, |beta| {
        let snapped: Vec<RasterMap> = gens.iter().map(|g| apply_threshold(g, beta)).collect();
        Ok(report_score(&evaluate(&refs, &snapped, &angles, &eval)?))
    })?;
    let path = ctx.path("tolerance.json");
    write_json(&path, &result)?;
    println!("best beta {:.5} score {:.4}", result.beta, result.score);
    Ok(Outcome {
        config: json!({ "search": tcfg, "eval": eval, "n": a.n }),
        seeds: json!({ "run": seed, "streams": ["latent", "gumbel", "tolerance", "eval-subset"] }),
        inputs: vec![a.checkpoint.clone(), a.reference.clone()],
        outputs: vec![path],
    })
}

fn inversion_config(a: &InversionArgs, seed: u64) -> Result<InversionConfig> {
    let cfg = InversionConfig {
        iterations: a.iterations,
        lr: a.lr,
        noise_scale: a.noise_scale,
        restarts: a.restarts,
        constraint: if a.free { Constraint::Free } else { Constraint::Sphere },
        seed,
        ..Default::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

fn decoder(path: &Path) -> Result<GanDecoder> {
    let ck = load_checkpoint(path)?;
    let (cfg, gen, ema) = load_generator(&ck)?;
    Ok(GanDecoder::new(gen, ema, &cfg)?)
}

#[derive(Serialize)]
struct InversionRecord<'a> {
    corruption: Option<CorruptionSpec>,
    best_loss: f64,
    best_iteration: usize,
    /// Masked L1 of the dense output against the clean target.
    clean_loss: f64,
    max_norm_error: f64,
    errors: &'a DepthErrorReport,
    latent: &'a [f64],
    loss_curve: &'a [f64],
}

pub fn invert_cmd(ctx: &Ctx, a: &InvertArgs) -> Result<Outcome> {
    let seed = ctx.seed();
    let cfg = inversion_config(&a.inversion, seed)?;
    let corruption = a.corruption.as_deref().map(Corruption::parse).transpose()?;
    let dec = decoder(&a.checkpoint)?;
    let target = match a.index {
        Some(i) => load_rasters(&a.target)?
            .into_iter()
            .nth(i)
            .ok_or_else(|| config_err(format!("index {i} is past the end of {}", a.target.display())))?,
        None => load_raster(&a.target).with_context(|| format!("loading raster {}", a.target.display()))?,
    };
    let spec = CorruptionSpec::new(corruption.unwrap_or(Corruption::RandomDrop { p: 0.0 }), seed);
    let rec = reconstruct_corrupted(&dec, &target, &spec, &cfg)?;
    let names = ["target", "corrupted", "dense", "composed"];
    let mut outputs = Vec::new();
    for (name, r) in names.iter().zip(rec.panel()) {
        let p = ctx.path(&format!("{name}.dsty"));
        save_raster(&p, r)?;
        outputs.push(p);
    }
    let panel = ctx.path("panel.png");
    save_panel(&panel, &rec.panel(), 1)?;
    let record = InversionRecord {
        corruption: corruption.map(|_| spec),
        best_loss: rec.inversion.best_loss,
        best_iteration: rec.inversion.best_iteration,
        clean_loss: masked_l1(&rec.inversion.dense, &target)?,
        max_norm_error: rec.inversion.max_norm_error,
        errors: &rec.errors,
        latent: &rec.inversion.latent,
        loss_curve: &rec.inversion.loss_curve,
    };
    let json_path = ctx.path("inversion.json");
    write_json(&json_path, &record)?;
    outputs.extend([panel, json_path]);
    println!(
        "best masked L1 {:.5} at iteration {}, abs rel {:.4}",
        record.best_loss, record.best_iteration, rec.errors.abs_rel
    );
    Ok(Outcome {
        config: json!({ "inversion": cfg, "corruption": a.corruption, "index": a.index }),
        seeds: json!({ "run": seed, "streams": ["inversion/init", "inversion/noise", "corrupt", "gumbel"] }),
        inputs: vec![a.checkpoint.clone(), a.target.clone()],
        outputs,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct CorruptionSummary {
    pub corruption: Corruption,
    pub targets: usize,
    pub inversion: DepthErrorReport,
    pub nearest_neighbor: DepthErrorReport,
    pub mean_loss: f64,
    /// Targets where inversion has the lower Abs Rel.
    pub inversion_wins: usize,
}

fn mean_report(rs: &[DepthErrorReport]) -> DepthErrorReport {
    let n = rs.len().max(1) as f64;
    let avg = |f: fn(&DepthErrorReport) -> f64| rs.iter().map(f).sum::<f64>() / n;
    DepthErrorReport {
        abs_rel: avg(|r| r.abs_rel),
        sq_rel: avg(|r| r.sq_rel),
        rmse: avg(|r| r.rmse),
        rmse_log: avg(|r| r.rmse_log),
        delta1: avg(|r| r.delta1),
        delta2: avg(|r| r.delta2),
        delta3: avg(|r| r.delta3),
        count: rs.iter().map(|r| r.count).sum(),
    }
}

/// Inverts every corrupted target and scores it next to the nearest
/// training raster found from the same corrupted input.
pub fn corruption_study<D: dusty_inversion::LatentDecoder + ?Sized>(
    decoder: &D,
    targets: &[RasterMap],
    pool: &[RasterMap],
    spec: &CorruptionSpec,
    cfg: &InversionConfig,
) -> Result<(CorruptionSummary, Vec<Reconstruction>, Vec<usize>)> {
    let recs = reconstruct_batch(decoder, targets, spec, cfg)?;
    let mut inv = Vec::with_capacity(recs.len());
    let mut nn = Vec::with_capacity(recs.len());
    let mut picks = Vec::with_capacity(recs.len());
    for r in &recs {
        let j = nearest_neighbor(&r.corrupted, pool)?;
        picks.push(j);
        inv.push(r.errors);
        nn.push(depth_errors(&pool[j], &r.target)?);
    }
    let wins = inv.iter().zip(&nn).filter(|(a, b)| a.abs_rel < b.abs_rel).count();
    let summary = CorruptionSummary {
        corruption: spec.corruption,
        targets: recs.len(),
        inversion: mean_report(&inv),
        nearest_neighbor: mean_report(&nn),
        mean_loss: recs.iter().map(|r| r.inversion.best_loss).sum::<f64>() / recs.len().max(1) as f64,
        inversion_wins: wins,
    };
    Ok((summary, recs, picks))
}

pub fn corrupt_cmd(ctx: &Ctx, a: &CorruptArgs) -> Result<Outcome> {
    let seed = ctx.seed();
    let cfg = inversion_config(&a.inversion, seed)?;
    let dec = decoder(&a.checkpoint)?;
    let mut targets = load_rasters(&a.targets)?;
    targets.truncate(a.count);
    let pool = load_rasters(&a.pool)?;
    if targets.is_empty() || pool.is_empty() {
        return Err(config_err("targets and pool must be nonempty"));
    }
    let h = targets[0].height();
    let kinds = if a.kinds.is_empty() {
        vec![Corruption::random_drop(), Corruption::keep_lines(h), Corruption::noise()]
    } else {
        a.kinds.iter().map(|k| Corruption::parse(k)).collect::<Result<_, _>>()?
    };
    let mut summaries = Vec::new();
    let mut outputs = Vec::new();
    for c in kinds {
        let spec = CorruptionSpec::new(c, seed);
        let (summary, recs, picks) = corruption_study(&dec, &targets, &pool, &spec, &cfg)?;
        println!(
            "{}: abs rel inversion {:.4} nearest neighbor {:.4} ({} of {} targets won)",
            c.name(),
            summary.inversion.abs_rel,
            summary.nearest_neighbor.abs_rel,
            summary.inversion_wins,
            summary.targets
        );
        // columns: target, corrupted, dense, composed, nearest neighbor
        let shown: Vec<&RasterMap> = recs
            .iter()
            .zip(&picks)
            .take(8)
            .flat_map(|(r, &j)| r.panel().into_iter().chain([&pool[j]]))
            .collect();
        let panel = ctx.path(&format!("{}.png", c.name()));
        save_panel(&panel, &shown, 5)?;
        outputs.push(panel);
        summaries.push(summary);
    }
    let path = ctx.path("corruption.json");
    write_json(&path, &summaries)?;
    outputs.push(path);
    Ok(Outcome {
        config: json!({ "inversion": cfg, "count": targets.len(), "kinds": summaries.iter().map(|s| s.corruption).collect::<Vec<_>>() }),
        seeds: json!({ "run": seed, "streams": ["inversion/init", "inversion/noise", "corrupt", "gumbel"] }),
        inputs: vec![a.checkpoint.clone(), a.targets.clone(), a.pool.clone()],
        outputs,
    })
}
