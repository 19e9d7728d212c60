use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "dusty", version, about = "LiDAR range-image GAN with learned point drops", args_conflicts_with_subcommands = true)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    /// Re-run the command recorded in a run manifest.
    #[arg(long, value_name = "MANIFEST")]
    pub replay: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct Common {
    /// Config file (JSON or key = value lines).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory for every artifact of the run [default: dusty-out].
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Clone, Debug, Subcommand, Serialize, Deserialize)]
pub enum Command {
    /// Render a synthetic dataset.
    Synth(SynthArgs),
    /// Train a generator.
    Train(TrainArgs),
    /// Sample rasters and point clouds from a checkpoint.
    Generate(GenerateArgs),
    /// Compare two raster sets with the point-cloud and image metrics.
    Evaluate(EvaluateArgs),
    /// Search the drop tolerance for a generator without a drop sampler.
    TuneTol(TuneTolArgs),
    /// Recover the latent code of one target raster.
    Invert(InvertArgs),
    /// Corrupt, invert and score a set of targets against nearest neighbors.
    Corrupt(CorruptArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Train(_) => "train",
            Command::Generate(_) => "generate",
            Command::Evaluate(_) => "evaluate",
            Command::TuneTol(_) => "tune-tol",
            Command::Invert(_) => "invert",
            Command::Corrupt(_) => "corrupt",
        }
    }
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 1000)]
    pub count: usize,
    #[arg(long, default_value_t = 16)]
    pub height: usize,
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    /// Uniform drop probability instead of the depth-dependent model.
    #[arg(long)]
    pub uniform_drop: Option<f64>,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    /// Raster batch to train on.
    #[arg(long)]
    pub data: PathBuf,
    /// Continue from a checkpoint; its config is used unless overridden.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// `key=value` config overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
pub enum ModeArg {
    Train,
    Test,
    Deterministic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
pub enum VariantArg {
    Baseline,
    Dusty1,
    Dusty2,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct GenerateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub n: usize,
    #[arg(long, value_enum, default_value = "test")]
    pub mode: ModeArg,
    /// Fail unless the checkpoint holds this variant.
    #[arg(long, value_enum)]
    pub variant: Option<VariantArg>,
    /// Skip writing one PLY file per sample.
    #[arg(long)]
    pub no_clouds: bool,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub reference: PathBuf,
    #[arg(long)]
    pub generated: PathBuf,
    #[arg(long, default_value_t = 256)]
    pub clouds: usize,
    #[arg(long, default_value_t = 256)]
    pub points: usize,
    #[arg(long, default_value_t = 5)]
    pub runs: usize,
    /// Angle table for back-projection; the synthetic scanner by default.
    #[arg(long)]
    pub angles: Option<PathBuf>,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct TuneTolArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub reference: PathBuf,
    /// Samples generated once and thresholded per trial.
    #[arg(long, default_value_t = 256)]
    pub n: usize,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lower: f64,
    #[arg(long, default_value_t = 1e-1)]
    pub upper: f64,
    #[arg(long, default_value_t = 128)]
    pub clouds: usize,
    #[arg(long, default_value_t = 128)]
    pub points: usize,
    #[arg(long, default_value_t = 1)]
    pub runs: usize,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct InversionArgs {
    #[arg(long, default_value_t = 1000)]
    pub iterations: usize,
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.05)]
    pub noise_scale: f64,
    #[arg(long, default_value_t = 1)]
    pub restarts: usize,
    /// Optimize without the hypersphere constraint.
    #[arg(long)]
    pub free: bool,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct InvertArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Raster file, or a batch file together with `--index`.
    #[arg(long)]
    pub target: PathBuf,
    #[arg(long)]
    pub index: Option<usize>,
    /// `random-drop:P`, `keep-lines:K` or `noise:VAR[:metric]`, applied to
    /// the target before inversion.
    #[arg(long)]
    pub corruption: Option<String>,
    #[command(flatten)]
    pub inversion: InversionArgs,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct CorruptArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Batch of clean targets.
    #[arg(long)]
    pub targets: PathBuf,
    /// Training batch searched by the nearest-neighbor baseline.
    #[arg(long)]
    pub pool: PathBuf,
    /// Targets used from the front of the batch.
    #[arg(long, default_value_t = 50)]
    pub count: usize,
    /// Corruptions to run; the three standard settings by default.
    #[arg(long = "kind")]
    pub kinds: Vec<String>,
    #[command(flatten)]
    pub inversion: InversionArgs,
}
