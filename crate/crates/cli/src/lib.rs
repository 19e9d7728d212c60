//! The `dusty` command line: argument types, commands and run manifests.

pub mod args;
pub mod commands;
pub mod exit;
pub mod manifest;

use std::path::PathBuf;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::Parser;

use crate::args::{Cli, Command};
use crate::commands::Ctx;
use crate::manifest::RunManifest;

pub const DEFAULT_OUT_DIR: &str = "dusty-out";

/// Resolves `--replay` into the recorded invocation. An `--out-dir` given
/// alongside `--replay` redirects the outputs.
fn resolve(cli: Cli) -> Result<(Cli, Vec<String>)> {
    let Some(path) = cli.replay.clone() else {
        return Ok((cli, std::env::args().skip(1).collect()));
    };
    let manifest = RunManifest::load(&path)?;
    let mut replayed = Cli::try_parse_from(std::iter::once("dusty".to_string()).chain(manifest.args.clone()))
        .with_context(|| format!("replaying {}", path.display()))?;
    if cli.common.out_dir.is_some() {
        replayed.common.out_dir = cli.common.out_dir;
    }
    Ok((replayed, manifest.args))
}

pub fn run(cli: Cli) -> Result<()> {
    let (cli, args) = resolve(cli)?;
    let Some(command) = cli.command else {
        return Err(exit::ConfigError("no subcommand given (see --help)".into()).into());
    };
    if let Some(n) = cli.common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| exit::ConfigError(format!("--threads {n}: {e}")))?;
    }
    let out_dir = cli.common.out_dir.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
    std::fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let ctx = Ctx { out_dir: out_dir.clone(), seed: cli.common.seed, config: cli.common.config.clone() };
    let start = Instant::now();
    let outcome = match &command {
        Command::Synth(a) => commands::synth(&ctx, a),
        Command::Train(a) => commands::train_cmd(&ctx, a),
        Command::Generate(a) => commands::generate(&ctx, a),
        Command::Evaluate(a) => commands::evaluate_cmd(&ctx, a),
        Command::TuneTol(a) => commands::tune_tol(&ctx, a),
        Command::Invert(a) => commands::invert_cmd(&ctx, a),
        Command::Corrupt(a) => commands::corrupt_cmd(&ctx, a),
    }?;
    let mut inputs = outcome.inputs;
    inputs.extend(cli.common.config.clone());
    let manifest = RunManifest {
        command: command.name().to_string(),
        args,
        config: outcome.config,
        seeds: outcome.seeds,
        version: env!("CARGO_PKG_VERSION").to_string(),
        inputs,
        outputs: outcome.outputs,
        wall_clock_s: start.elapsed().as_secs_f64(),
    };
    manifest.save(&out_dir)?;
    Ok(())
}
