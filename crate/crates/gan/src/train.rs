//! Alternating discriminator/generator training.
//!
//! Every step draws its randomness from named streams keyed by the run
//! seed and the step number, so a resumed run follows the same trajectory
//! as an uninterrupted one.

use std::fs;
use std::path::{Path, PathBuf};

use dusty_lidar::{RasterMap, DROP_VALUE};
use dusty_tensor::rng::{self, Rng};
use dusty_tensor::{adam_step, AdamConfig, AdamState, Checkpoint, Graph, ParamRole, ParamSet, Tensor, TensorError, Var};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::augment::diff_augment;
use crate::compose::{compose_var, rasters_to_tensor};
use crate::config::{SamplerConfig, SamplerMode, TrainConfig};
use crate::ema::ema_update;
use crate::error::{GanError, Result};
use crate::export::save_grid_png;
use crate::losses::{loss_d, loss_g, r1_penalty};
use crate::networks::{bind, param_grads, Bound, Discriminator, Generator};
use crate::sampler::mask_var;

/// Per-step diagnostics, also the row type of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub step: u64,
    pub loss_d: f32,
    pub loss_g: f32,
    pub r1: Option<f32>,
    pub real_logit: f32,
    pub fake_logit: f32,
    pub real_drop_rate: f64,
    pub fake_drop_rate: f64,
}

/// Networks, parameters and optimizer state of one run.
pub struct Trainer {
    config: TrainConfig,
    gen: Generator,
    disc: Discriminator,
    pub g_params: ParamSet,
    pub d_params: ParamSet,
    pub g_ema: ParamSet,
    adam_g: AdamState,
    adam_d: AdamState,
    step: u64,
}

fn step_stream(seed: u64, name: &str, step: u64) -> Rng {
    rng::stream(seed, &format!("{name}/{step}"))
}

/// `[n, d]` standard normal latent codes.
pub fn sample_latents<R: rand::Rng + ?Sized>(n: usize, d: usize, rng: &mut R) -> Tensor {
    Tensor::randn([n, d], rng)
}

fn mean(v: &Var<'_>) -> f32 {
    let t = v.value();
    t.data().iter().sum::<f32>() / t.numel().max(1) as f32
}

fn drop_rate(t: &Tensor) -> f64 {
    t.data().iter().filter(|&&v| v == DROP_VALUE).count() as f64 / t.numel().max(1) as f64
}

/// Composed generator output as a graph node plus its hard-mask drop rate.
pub fn fake_batch<'g>(
    gen: &Generator,
    bound: &Bound<'g>,
    z: Var<'g>,
    sampler: &SamplerConfig,
    gumbel: &mut Rng,
) -> Result<(Var<'g>, f64)> {
    let out = gen.forward(z, bound)?;
    match out.pixel_logits {
        None => Ok((out.dense, 0.0)),
        Some(pix) => {
            let (m, _) = mask_var(pix, out.image_logits, sampler, gumbel)?;
            let rate = m.mask.value().data().iter().filter(|&&v| v == 0.0).count() as f64
                / m.mask.numel() as f64;
            Ok((compose_var(out.dense, m.mask, DROP_VALUE)?, rate))
        }
    }
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let net = config.net();
        let gen = Generator::new(&net)?;
        let disc = Discriminator::new(&net)?;
        let g_params = gen.init(&mut rng::stream(config.seed, "init/generator"))?;
        let d_params = disc.init(&mut rng::stream(config.seed, "init/discriminator"))?;
        let adam = AdamConfig { lr: config.lr, ..AdamConfig::default() };
        Ok(Trainer {
            adam_g: AdamState::new(adam, &g_params),
            adam_d: AdamState::new(adam, &d_params),
            g_ema: g_params.clone(),
            g_params,
            d_params,
            gen,
            disc,
            config,
            step: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn generator(&self) -> &Generator {
        &self.gen
    }

    pub fn discriminator(&self) -> &Discriminator {
        &self.disc
    }

    /// Number of completed steps.
    pub fn step(&self) -> u64 {
        self.step
    }

    fn sampler(&self) -> Result<SamplerConfig> {
        self.config.sampler(SamplerMode::Train)
    }

    /// One discriminator update followed by one generator update. A NaN or
    /// infinity anywhere in either pass surfaces as [`GanError::NonFinite`].
    pub fn train_step(&mut self, real: &Tensor) -> Result<StepStats> {
        let step = self.step;
        self.try_step(real).map_err(|e| match e {
            GanError::Tensor(TensorError::NonFinite { op }) => GanError::NonFinite {
                what: format!("value in {op}"),
                step,
            },
            e => e,
        })
    }

    fn try_step(&mut self, real: &Tensor) -> Result<StepStats> {
        let cfg = self.config.clone();
        let step = self.step;
        let n = real.shape()[0];
        let sampler = self.sampler()?;
        let augment = cfg.augment();
        let finite = |what: &str, v: f32| {
            if v.is_finite() {
                Ok(v)
            } else {
                Err(GanError::NonFinite { what: what.into(), step })
            }
        };

        // discriminator
        let (loss_d_val, r1_val, real_logit, fake_logit_d) = {
            let g = Graph::new();
            let gb = bind(&g, &self.g_params, false);
            let db = bind(&g, &self.d_params, true);
            let z = g.constant(sample_latents(n, cfg.latent_dim, &mut step_stream(cfg.seed, "latent/d", step)));
            let mut gumbel = step_stream(cfg.seed, "gumbel/d", step);
            let (fake, _) = fake_batch(&self.gen, &gb, z, &sampler, &mut gumbel)?;
            let do_r1 = cfg.r1_gamma > 0.0 && step % cfg.r1_interval == 0;
            let real_v = g.leaf(real.clone(), do_r1);
            let mut aug = step_stream(cfg.seed, "augment/d", step);
            let real_aug = diff_augment(real_v, &augment, DROP_VALUE, &mut aug)?;
            let fake_aug = diff_augment(fake, &augment, DROP_VALUE, &mut aug)?;
            let real_logits = self.disc.forward(real_aug, &db)?;
            let fake_logits = self.disc.forward(fake_aug, &db)?;
            let mut loss = loss_d(real_logits, fake_logits)?;
            let loss_val = finite("discriminator loss", loss.item()?)?;
            let mut r1_val = None;
            if do_r1 {
                let r1 = r1_penalty(real_v, real_logits, cfg.r1_gamma)?;
                r1_val = Some(finite("R1 penalty", r1.item()?)?);
                loss = loss.add(r1.scale(cfg.r1_interval as f32)?)?;
            }
            let grads = param_grads(&g, loss, &db)?;
            adam_step(&mut self.d_params, &grads, &mut self.adam_d)?;
            (loss_val, r1_val, mean(&real_logits), mean(&fake_logits))
        };

        // generator
        let (loss_g_val, fake_drop) = {
            let g = Graph::new();
            let gb = bind(&g, &self.g_params, true);
            let db = bind(&g, &self.d_params, false);
            let z = g.constant(sample_latents(n, cfg.latent_dim, &mut step_stream(cfg.seed, "latent/g", step)));
            let mut gumbel = step_stream(cfg.seed, "gumbel/g", step);
            let (fake, rate) = fake_batch(&self.gen, &gb, z, &sampler, &mut gumbel)?;
            let mut aug = step_stream(cfg.seed, "augment/g", step);
            let fake_aug = diff_augment(fake, &augment, DROP_VALUE, &mut aug)?;
            let loss = loss_g(self.disc.forward(fake_aug, &db)?)?;
            let loss_val = finite("generator loss", loss.item()?)?;
            let grads = param_grads(&g, loss, &gb)?;
            adam_step(&mut self.g_params, &grads, &mut self.adam_g)?;
            (loss_val, rate)
        };
        ema_update(&mut self.g_ema, &self.g_params, cfg.ema_decay)?;
        self.step += 1;
        Ok(StepStats {
            step: self.step,
            loss_d: loss_d_val,
            loss_g: loss_g_val,
            r1: r1_val,
            real_logit,
            fake_logit: fake_logit_d,
            real_drop_rate: drop_rate(real),
            fake_drop_rate: fake_drop,
        })
    }

    /// Seeded minibatch (with replacement) for the current step.
    pub fn draw_batch(&self, dataset: &[RasterMap]) -> Result<Tensor> {
        if dataset.is_empty() {
            return Err(GanError::Config("empty dataset".into()));
        }
        let mut rng = step_stream(self.config.seed, "data", self.step);
        let picks: Vec<&RasterMap> = (0..self.config.batch_size)
            .map(|_| &dataset[rng.gen_range(0..dataset.len())])
            .collect();
        rasters_to_tensor(&picks)
    }

    /// Composed samples from the EMA generator.
    pub fn sample(&self, z: &Tensor, mode: SamplerMode, seed: u64) -> Result<Tensor> {
        let sampler = self.config.sampler(mode)?;
        let g = Graph::new();
        let gb = bind(&g, &self.g_ema, false);
        let mut gumbel = rng::stream(seed, "gumbel");
        let (x, _) = fake_batch(&self.gen, &gb, g.constant(z.clone()), &sampler, &mut gumbel)?;
        Ok((*x.value()).clone())
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::default();
        ck.header.step = self.step;
        ck.header.meta = serde_json::json!({ "config": serde_json::to_value(&self.config)? });
        ck.put_params("g", &self.g_params);
        ck.put_params("d", &self.d_params);
        ck.put_params("g_ema", &self.g_ema);
        ck.put_adam("adam_g", &self.adam_g);
        ck.put_adam("adam_d", &self.adam_d);
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let config = checkpoint_config(ck)?;
        let mut t = Trainer::new(config)?;
        let g = ck.params("g", ParamRole::Generator)?;
        let d = ck.params("d", ParamRole::Discriminator)?;
        let ema = ck.params("g_ema", ParamRole::Generator)?;
        if !g.same_layout(&t.g_params) || !ema.same_layout(&t.g_params) || !d.same_layout(&t.d_params) {
            return Err(GanError::Shape("checkpoint parameters do not match its config".into()));
        }
        t.g_params = g;
        t.d_params = d;
        t.g_ema = ema;
        t.adam_g = ck.adam("adam_g")?;
        t.adam_d = ck.adam("adam_d")?;
        t.step = ck.header.step;
        Ok(t)
    }
}

/// Training config stored in a checkpoint header.
pub fn checkpoint_config(ck: &Checkpoint) -> Result<TrainConfig> {
    let value = ck
        .header
        .meta
        .get("config")
        .cloned()
        .ok_or_else(|| GanError::Config("checkpoint has no training config".into()))?;
    let cfg: TrainConfig = serde_json::from_value(value)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Generator and its EMA weights from a checkpoint.
pub fn load_generator(ck: &Checkpoint) -> Result<(TrainConfig, Generator, ParamSet)> {
    let cfg = checkpoint_config(ck)?;
    let gen = Generator::new(&cfg.net())?;
    let ema = ck.params("g_ema", ParamRole::Generator)?;
    let fresh = gen.init(&mut rng::stream(0, "layout"))?;
    if !ema.same_layout(&fresh) {
        return Err(GanError::Shape("checkpoint generator does not match its config".into()));
    }
    Ok((cfg, gen, ema))
}

/// Where a training run writes its artifacts.
#[derive(Clone, Debug)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root.join("checkpoints"))?;
        fs::create_dir_all(root.join("samples"))?;
        Ok(RunDir { root: root.to_path_buf() })
    }

    pub fn checkpoint(&self, step: u64) -> PathBuf {
        self.root.join("checkpoints").join(format!("step_{step:07}.dsck"))
    }

    pub fn latest(&self) -> PathBuf {
        self.root.join("checkpoints").join("latest.dsck")
    }

    pub fn log(&self) -> PathBuf {
        self.root.join("log.csv")
    }

    pub fn sample_grid(&self, step: u64) -> PathBuf {
        self.root.join("samples").join(format!("step_{step:07}.png"))
    }
}

/// Summary of a [`train`] call.
#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub steps: u64,
    pub history: Vec<StepStats>,
}

const GRID_SAMPLES: usize = 16;

/// Runs `trainer` until it has completed `config.steps` steps. With a run
/// directory, appends log rows every `log_every` steps, writes sample grids
/// and checkpoints, and on a non-finite loss leaves `diagnostic.dsck`.
pub fn train(trainer: &mut Trainer, dataset: &[RasterMap], out: Option<&RunDir>) -> Result<TrainSummary> {
    let cfg = trainer.config.clone();
    if let Some(r) = dataset.iter().find(|r| r.shape() != (cfg.height, cfg.width)) {
        return Err(GanError::Shape(format!(
            "dataset raster {:?} vs config {}x{}",
            r.shape(),
            cfg.height,
            cfg.width
        )));
    }
    let mut log = match out {
        Some(dir) => {
            let fresh = !dir.log().exists();
            let file = fs::OpenOptions::new().create(true).append(true).open(dir.log())?;
            Some(csv::WriterBuilder::new().has_headers(fresh).from_writer(file))
        }
        None => None,
    };
    let grid_z = sample_latents(GRID_SAMPLES, cfg.latent_dim, &mut rng::stream(cfg.seed, "grid"));
    let mut history = Vec::new();
    while trainer.step < cfg.steps {
        let batch = trainer.draw_batch(dataset)?;
        let stats = match trainer.train_step(&batch) {
            Ok(s) => s,
            Err(e @ GanError::NonFinite { .. }) => {
                if let Some(dir) = out {
                    trainer.to_checkpoint()?.save(&dir.root.join("diagnostic.dsck"))?;
                }
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        let s = stats.step;
        if s % cfg.log_every == 0 || s == cfg.steps {
            log::info!(
                "step {s}: loss_d {:.4} loss_g {:.4} drop real {:.3} fake {:.3}",
                stats.loss_d,
                stats.loss_g,
                stats.real_drop_rate,
                stats.fake_drop_rate
            );
            if let Some(w) = log.as_mut() {
                w.serialize(&stats)?;
                w.flush()?;
            }
        }
        if let Some(dir) = out {
            if s % cfg.sample_every == 0 || s == cfg.steps {
                let x = trainer.sample(&grid_z, SamplerMode::Test, cfg.seed)?;
                save_grid_png(&dir.sample_grid(s), &x, 4)?;
            }
            if s % cfg.checkpoint_every == 0 || s == cfg.steps {
                let ck = trainer.to_checkpoint()?;
                ck.save(&dir.checkpoint(s))?;
                ck.save(&dir.latest())?;
            }
        }
        history.push(stats);
    }
    Ok(TrainSummary { steps: trainer.step, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Variant;
    use dusty_lidar::{synth_dataset, DropModel};

    fn tiny(variant: Variant) -> TrainConfig {
        TrainConfig {
            variant,
            latent_dim: 8,
            gen_channels: [8, 4, 4, 4],
            disc_channels: [4, 4, 4, 8],
            batch_size: 4,
            r1_interval: 2,
            steps: 4,
            log_every: 1,
            sample_every: 2,
            checkpoint_every: 2,
            ..TrainConfig::desk()
        }
    }

    fn data() -> Vec<RasterMap> {
        synth_dataset(1, 8, 16, 64, &DropModel::default())
            .unwrap()
            .into_iter()
            .map(|s| s.dropped)
            .collect()
    }

    #[test]
    fn every_variant_trains() {
        let ds = data();
        for v in [Variant::Baseline, Variant::Dusty1, Variant::Dusty2] {
            let mut t = Trainer::new(tiny(v)).unwrap();
            let summary = train(&mut t, &ds, None).unwrap();
            assert_eq!(summary.steps, 4);
            assert!(summary.history.iter().all(|s| s.loss_d.is_finite() && s.loss_g.is_finite()));
            assert!(summary.history[0].r1.is_some() && summary.history[1].r1.is_none());
            if v == Variant::Baseline {
                assert!(summary.history.iter().all(|s| s.fake_drop_rate == 0.0));
            }
        }
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let ds = data();
        let mut full = Trainer::new(tiny(Variant::Dusty2)).unwrap();
        train(&mut full, &ds, None).unwrap();

        let mut half = Trainer::new(TrainConfig { steps: 2, ..tiny(Variant::Dusty2) }).unwrap();
        train(&mut half, &ds, None).unwrap();
        let bytes = half.to_checkpoint().unwrap().to_bytes().unwrap();
        let mut resumed = Trainer::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
        resumed.config.steps = 4;
        train(&mut resumed, &ds, None).unwrap();
        assert_eq!(resumed.step(), 4);
        assert_eq!(resumed.g_params, full.g_params);
        assert_eq!(resumed.d_params, full.d_params);
        assert_eq!(resumed.g_ema, full.g_ema);
    }

    #[test]
    fn run_dir_artifacts() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = RunDir::create(tmp.path()).unwrap();
        let mut t = Trainer::new(tiny(Variant::Dusty1)).unwrap();
        train(&mut t, &data(), Some(&dir)).unwrap();
        assert!(dir.checkpoint(2).exists() && dir.checkpoint(4).exists());
        assert!(dir.sample_grid(4).exists());
        let rows: Vec<StepStats> = csv::Reader::from_path(dir.log())
            .unwrap()
            .deserialize()
            .collect::<std::result::Result<_, _>>()
            .unwrap();
        assert_eq!(rows.len(), 4);
        let ck = Checkpoint::load(&dir.latest()).unwrap();
        let (cfg, gen, ema) = load_generator(&ck).unwrap();
        assert_eq!(cfg, tiny(Variant::Dusty1));
        assert_eq!(ema, t.g_ema);
        assert_eq!(gen.config().variant, Variant::Dusty1);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let ds = synth_dataset(1, 2, 32, 64, &DropModel::default())
            .unwrap()
            .into_iter()
            .map(|s| s.dropped)
            .collect::<Vec<_>>();
        let mut t = Trainer::new(tiny(Variant::Dusty1)).unwrap();
        assert!(matches!(train(&mut t, &ds, None), Err(GanError::Shape(_))));
    }

    #[test]
    fn non_finite_loss_leaves_diagnostic_checkpoint() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = RunDir::create(tmp.path()).unwrap();
        let mut t = Trainer::new(tiny(Variant::Dusty1)).unwrap();
        t.d_params.get_mut("l0.weight").unwrap().data_mut()[0] = f32::NAN;
        let err = train(&mut t, &data(), Some(&dir)).unwrap_err();
        assert!(matches!(err, GanError::NonFinite { step: 0, .. }), "{err:?}");
        assert!(tmp.path().join("diagnostic.dsck").exists());
    }
}
