use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use dusty_cli::manifest::RunManifest;
use dusty_lidar::io::{load_batch, load_raster};
use dusty_metrics::MetricReport;
use serde_json::Value;

const TINY: [&str; 10] = [
    "--set=latent_dim=32",
    "--set=gen_channels=8,8,4,4",
    "--set=disc_channels=4,4,8,8",
    "--set=batch_size=4",
    "--set=r1_interval=2",
    "--set=log_every=1",
    "--set=sample_every=2",
    "--set=checkpoint_every=2",
    "--set=variant=dusty2",
    "--set=lr=0.002",
];

fn dusty(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dusty"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = dusty(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, count: usize, seed: u64) -> PathBuf {
    ok(&["synth", "--count", &count.to_string(), "--seed", &seed.to_string(), "--out-dir", s(dir)]);
    dir.join("dataset.dstb")
}

fn tiny_checkpoint(root: &Path) -> (PathBuf, PathBuf) {
    let data = synth(&root.join("data"), 24, 1);
    let run = root.join("run");
    let mut args = vec!["train", "--data", s(&data), "--out-dir", s(&run), "--set=steps=2"];
    args.extend(TINY);
    ok(&args);
    (run.join("checkpoints").join("latest.dsck"), data)
}

#[test]
fn synth_is_reproducible_and_writes_a_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let a = synth(&tmp.path().join("a"), 20, 7);
    let b = synth(&tmp.path().join("b"), 20, 7);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let m = RunManifest::load(&tmp.path().join("a/manifest.json")).unwrap();
    assert_eq!(m.command, "synth");
    assert_eq!(m.seeds["run"], 7);
    assert_eq!(load_batch(&a).unwrap().len(), 20);
    assert_eq!(load_batch(&tmp.path().join("a/drop_prob.dstb")).unwrap().len(), 20);
}

#[test]
fn empty_synth_still_has_a_header() {
    let tmp = tempfile::tempdir().unwrap();
    let a = synth(tmp.path(), 0, 0);
    assert!(load_batch(&a).unwrap().is_empty());
    assert!(std::fs::metadata(&a).unwrap().len() > 0);
}

#[test]
fn thousand_scenes_within_budget() {
    let tmp = tempfile::tempdir().unwrap();
    let t = Instant::now();
    synth(tmp.path(), 1000, 3);
    assert!(t.elapsed().as_secs_f64() < 10.0, "took {:?}", t.elapsed());
}

#[test]
fn replay_reproduces_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let a = synth(&tmp.path().join("a"), 10, 5);
    let manifest = tmp.path().join("a/manifest.json");
    let b_dir = tmp.path().join("b");
    ok(&["--replay", s(&manifest), "--out-dir", s(&b_dir)]);
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b_dir.join("dataset.dstb")).unwrap());
}

#[test]
fn train_resume_generate_and_invert() {
    let tmp = tempfile::tempdir().unwrap();
    let (ck, data) = tiny_checkpoint(tmp.path());
    assert!(ck.exists());

    // resuming continues the step counter
    let run = tmp.path().join("run");
    let mut args = vec!["train", "--data", s(&data), "--out-dir", s(&run), "--resume", s(&ck), "--set=steps=4"];
    args.extend(TINY);
    ok(&args);
    let log = std::fs::read_to_string(run.join("log.csv")).unwrap();
    let steps: Vec<u64> = log.lines().skip(1).map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(steps, vec![1, 2, 3, 4]);
    let cfg = RunManifest::load(&run.join("manifest.json")).unwrap().config;
    assert_eq!(cfg["variant"], "dusty2");

    // n = 1 is deterministic given the seed
    let g1 = tmp.path().join("g1");
    let g2 = tmp.path().join("g2");
    for g in [&g1, &g2] {
        ok(&["generate", "--checkpoint", s(&ck), "--n", "1", "--seed", "9", "--out-dir", s(g)]);
    }
    let b1 = std::fs::read(g1.join("samples.dstb")).unwrap();
    assert_eq!(b1, std::fs::read(g2.join("samples.dstb")).unwrap());
    assert!(g1.join("clouds/sample_00000.ply").exists());
    assert!(g1.join("samples.png").exists());

    let out = dusty(&["generate", "--checkpoint", s(&ck), "--variant", "baseline", "--out-dir", s(&g1)]);
    assert_eq!(out.status.code(), Some(2));

    // a generator-born target is reachable
    let born = tmp.path().join("born");
    ok(&["generate", "--checkpoint", s(&ck), "--n", "2", "--seed", "3", "--no-clouds", "--out-dir", s(&born)]);
    let inv = tmp.path().join("inv");
    ok(&[
        "invert",
        "--checkpoint",
        s(&ck),
        "--target",
        s(&born.join("samples.dstb")),
        "--index",
        "1",
        "--out-dir",
        s(&inv),
    ]);
    let record: Value = serde_json::from_str(&std::fs::read_to_string(inv.join("inversion.json")).unwrap()).unwrap();
    assert!(record["best_loss"].as_f64().unwrap() < 0.05, "{}", record["best_loss"]);
    assert!(record["max_norm_error"].as_f64().unwrap() < 1e-6);
    assert!(inv.join("panel.png").exists());
    let dense = load_raster(&inv.join("dense.dsty")).unwrap();
    assert_eq!(dense.shape(), (16, 64));

    // keep-lines with a single row still yields a full dense output
    let corr = tmp.path().join("corr");
    ok(&[
        "corrupt",
        "--checkpoint",
        s(&ck),
        "--targets",
        s(&data),
        "--pool",
        s(&data),
        "--count",
        "3",
        "--kind",
        "keep-lines:1",
        "--kind",
        "random-drop:0.9",
        "--iterations",
        "20",
        "--out-dir",
        s(&corr),
    ]);
    let summary: Value = serde_json::from_str(&std::fs::read_to_string(corr.join("corruption.json")).unwrap()).unwrap();
    assert_eq!(summary.as_array().unwrap().len(), 2);
    assert_eq!(summary[0]["corruption"]["kind"], "keep-lines");
    assert!(corr.join("keep-lines.png").exists());

    let bad = tmp.path().join("bad");
    let out = dusty(&[
        "invert", "--checkpoint", s(&ck), "--target", s(&data), "--index", "0", "--corruption", "blur:2", "--out-dir",
        s(&bad),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn evaluate_identical_sets() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(&tmp.path().join("d"), 12, 2);
    let ev = tmp.path().join("ev");
    let args = [
        "evaluate",
        "--reference",
        s(&data),
        "--generated",
        s(&data),
        "--clouds",
        "8",
        "--points",
        "64",
        "--runs",
        "2",
        "--out-dir",
        s(&ev),
    ];
    ok(&args);
    let csv = std::fs::read_to_string(ev.join("report.csv")).unwrap();
    let report = MetricReport::from_csv(&csv).unwrap();
    let json = MetricReport::from_json(&std::fs::read_to_string(ev.join("report.json")).unwrap()).unwrap();
    assert_eq!(report, json);
    assert_eq!(report.cov.mean, 1.0);
    assert_eq!(report.mmd.mean, 0.0);
    assert_eq!(report.jsd.mean, 0.0);
}

#[test]
fn error_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.dsck");
    let out = dusty(&["generate", "--checkpoint", s(&missing), "--out-dir", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(4));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("nope.dsck"), "{err}");
    assert!(!err.contains("panicked"));

    assert_eq!(dusty(&["synth", "--bogus"]).status.code(), Some(2));
    assert_eq!(dusty(&["frobnicate"]).status.code(), Some(2));

    let bad_cfg = tmp.path().join("bad.cfg");
    std::fs::write(&bad_cfg, "height = 24\n").unwrap();
    let data = synth(&tmp.path().join("d"), 4, 0);
    let out = dusty(&["train", "--data", s(&data), "--config", s(&bad_cfg), "--out-dir", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));

    // a learning rate this large overflows within a few steps
    let run = tmp.path().join("nan");
    let mut args = vec!["train", "--data", s(&data), "--out-dir", s(&run), "--set=steps=50", "--set=lr=1e30"];
    args.extend(&TINY[..9]);
    let out = dusty(&args);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(run.join("diagnostic.dsck").exists());
}
