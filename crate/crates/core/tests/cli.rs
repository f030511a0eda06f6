//! End-to-end runs of the `cpsp` binary on a tiny synthetic pack.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use cpsp::cli::RunManifest;
use cpsp::eval::EvalReport;
use cpsp::trainer::Checkpoint;

const SYNTH: &str = "num_classes = 2\nvideos_per_class = 8\nt = 4\nd_a = 8\nd_v = 8\nn = 3\nsignal_positions = 1\nevent_span_range = [1, 3]\n";
const TRAIN: &str = "epochs = 1\nbatch_size = 8\nd_att = 8\nd_l = 8\nd_h = 8\n";

fn cpsp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cpsp"))
        .args(["--log-level", "error"])
        .args(args)
        .env_remove("CPSP_SEED")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn setup(dir: &Path) {
    fs::write(dir.join("synth.toml"), SYNTH).unwrap();
    fs::write(dir.join("train.toml"), TRAIN).unwrap();
    let out = cpsp(&["synth", "--out", s(&dir.join("pack")), "--config", s(&dir.join("synth.toml"))]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn train(dir: &Path, mode: &str, out: &str, init: Option<&str>) -> Output {
    let pack = dir.join("pack");
    let cfg = dir.join("train.toml");
    let out_dir = dir.join(out);
    let mut args = vec!["train", "--pack", s(&pack), "--mode", mode, "--out", s(&out_dir), "--config", s(&cfg)];
    let init_dir;
    if let Some(i) = init {
        init_dir = dir.join(i).join("checkpoint");
        args.extend(["--init", s(&init_dir)]);
    }
    cpsp(&args)
}

#[test]
fn train_eval_analyze_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    setup(dir);
    let manifest: RunManifest =
        serde_json::from_str(&fs::read_to_string(dir.join("pack/run_manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.subcommand, "synth");

    let out = train(dir, "psp", "psp", None);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.join("psp/metrics.csv")).unwrap();
    assert!(csv.starts_with("epoch,split,loss_total,loss_ce,loss_avpsp,loss_spsa,loss_vpsa,loss_ss,accuracy"));
    let run: RunManifest = serde_json::from_str(&fs::read_to_string(dir.join("psp/run_manifest.json")).unwrap()).unwrap();
    let ckpt = Checkpoint::load(&dir.join("psp/checkpoint")).unwrap();
    assert_eq!(run.config_hash, ckpt.manifest.config_hash);
    assert_eq!(run.resolved_config["d_l"], 8);

    let out = cpsp(&[
        "eval",
        "--pack",
        s(&dir.join("pack")),
        "--checkpoint",
        s(&dir.join("psp/checkpoint")),
        "--out",
        s(&dir.join("eval")),
        "--split",
        "val",
        "--maps",
        "2",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: EvalReport = serde_json::from_str(&fs::read_to_string(dir.join("eval/report.json")).unwrap()).unwrap();
    assert!((report.segment_accuracy - ckpt.manifest.metrics.val_accuracy).abs() <= 1e-3);
    assert_eq!(report.checkpoint_mode.as_deref(), Some("psp"));
    assert_eq!(fs::read_dir(dir.join("eval/maps")).unwrap().count(), 4);
    assert!(dir.join("eval/accuracy.svg").exists());

    let out = cpsp(&[
        "analyze",
        "--pack",
        s(&dir.join("pack")),
        "--checkpoint",
        s(&dir.join("psp/checkpoint")),
        "--out",
        s(&dir.join("analysis")),
        "--videos",
        "1",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.join("analysis/centroid_distances.csv").exists());
    assert_eq!(fs::read_dir(dir.join("analysis/similarity")).unwrap().count(), 2);

    // staged refinement from the saved checkpoint
    let out = train(dir, "cpsp_s", "cpsp_s", Some("psp"));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = train(dir, "cpsp_sepa", "sepa", Some("cpsp_s"));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    setup(dir);
    // stage order: refinement without its initial checkpoint
    assert_eq!(train(dir, "cpsp_s", "x", None).status.code(), Some(4));
    // configuration: unknown mode and unknown config key
    assert_eq!(train(dir, "no_such_mode", "x", None).status.code(), Some(2));
    fs::write(dir.join("train.toml"), "bogus = 1\n").unwrap();
    assert_eq!(train(dir, "psp", "x", None).status.code(), Some(2));
    // data: missing pack
    let out = cpsp(&["train", "--pack", s(&dir.join("missing")), "--out", s(&dir.join("x"))]);
    assert_eq!(out.status.code(), Some(3));
    // usage errors are configuration errors
    assert_eq!(cpsp(&["train"]).status.code(), Some(2));
}

#[test]
fn env_seed_sits_below_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("synth.toml"), SYNTH).unwrap();
    let run = |env: Option<&str>, flag: Option<&str>, out: &str| -> RunManifest {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_cpsp"));
        cmd.args(["--log-level", "error", "synth", "--out", s(&dir.join(out)), "--config", s(&dir.join("synth.toml"))]);
        if let Some(f) = flag {
            cmd.args(["--seed", f]);
        }
        match env {
            Some(e) => cmd.env("CPSP_SEED", e),
            None => cmd.env_remove("CPSP_SEED"),
        };
        assert!(cmd.output().unwrap().status.success());
        serde_json::from_str(&fs::read_to_string(dir.join(out).join("run_manifest.json")).unwrap()).unwrap()
    };
    assert_eq!(run(None, None, "a").resolved_config["seed"], 0);
    assert_eq!(run(Some("5"), None, "b").resolved_config["seed"], 5);
    assert_eq!(run(Some("5"), Some("9"), "c").resolved_config["seed"], 9);
}

#[test]
fn sweep_writes_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    setup(dir);
    let out = cpsp(&[
        "sweep",
        "--pack",
        s(&dir.join("pack")),
        "--out",
        s(&dir.join("sweep")),
        "--grid",
        "all",
        "--config",
        s(&dir.join("train.toml")),
        "--parallel",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["tau_grid.csv", "theta_grid.csv", "k_grid.csv", "sweep.md", "run_manifest.json"] {
        assert!(dir.join("sweep").join(name).exists(), "{name}");
    }
    let tau = fs::read_to_string(dir.join("sweep/tau_grid.csv")).unwrap();
    assert_eq!(tau.lines().count(), 6);
}
