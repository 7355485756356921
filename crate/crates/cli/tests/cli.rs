use std::path::Path;
use std::process::{Command, Output};

use spatialfdr_core::volume::load_volume;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spatialfdr"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn simulate_small(dir: &Path) {
    let out = run(
        dir,
        &["--out", "sim", "--seed", "4", "simulate", "--dims", "12,12,12", "--reps", "2", "--mu1", "-3"],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}

const TINY_CONFIG: &str = r#"{
  "alpha": 0.1,
  "methods": ["bh", "qvalue", "localfdr", "deepfdr"],
  "settings": [{"id": "t", "dims": [12, 12, 12], "target_p1": 0.2, "mu1": -3.0,
                "sigma1sq": 1.0, "seed": 5, "replications": 3, "design": "blobs"}],
  "wnet": {"channels": [2, 4, 8], "padded_dims": [12, 12, 12], "max_epochs": 3}
}"#;

#[test]
fn simulate_writes_volumes_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    simulate_small(dir.path());
    let sim = dir.path().join("sim");
    for f in ["h", "x_rep0", "p_rep0", "x_rep1", "p_rep1"] {
        let v = load_volume(&sim.join(f)).unwrap();
        assert_eq!(v.dims(), [12, 12, 12]);
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(sim.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["setting"]["seed"], 4);
    assert_eq!(manifest["rep_seeds"].as_array().unwrap().len(), 2);
}

#[test]
fn simulate_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    simulate_small(a.path());
    simulate_small(b.path());
    for f in ["h.vol", "x_rep1.vol", "p_rep1.vol", "manifest.json"] {
        let fa = std::fs::read(a.path().join("sim").join(f)).unwrap();
        let fb = std::fs::read(b.path().join("sim").join(f)).unwrap();
        assert_eq!(fa, fb, "{f} differs");
    }
}

#[test]
fn simulate_rejects_out_of_range_proportion() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["simulate", "--p1", "0.95"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("p1"));
}

#[test]
fn baselines_and_metrics_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    simulate_small(dir.path());
    for method in ["bh", "qvalue"] {
        let out = run(dir.path(), &["--out", "res", "baseline", "--method", method, "--p", "sim/p_rep0.vol"]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
    let out = run(dir.path(), &["--out", "res", "baseline", "--method", "localfdr", "--x", "sim/x_rep0"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("res/bh.json")).unwrap()).unwrap();
    assert_eq!(summary["method"], "bh");
    let k = summary["k"].as_u64().unwrap();

    let out = run(dir.path(), &["metrics", "--rejections", "res/bh", "--truth", "sim/h"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let m: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(m["r"].as_u64().unwrap(), k);
    assert_eq!(m["n10"].as_u64().unwrap() + m["n11"].as_u64().unwrap(), k);
    assert_eq!(m["m0"].as_u64().unwrap() + m["m1"].as_u64().unwrap(), 1728);
}

#[test]
fn localfdr_requires_statistics() {
    let dir = tempfile::tempdir().unwrap();
    simulate_small(dir.path());
    let out = run(dir.path(), &["baseline", "--method", "localfdr", "--p", "sim/p_rep0"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn unknown_method_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["baseline", "--method", "holm", "--p", "x"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn metrics_rejects_mismatched_dims() {
    let dir = tempfile::tempdir().unwrap();
    simulate_small(dir.path());
    let out = run(
        dir.path(),
        &["--out", "other", "simulate", "--dims", "8,8,8", "--reps", "1"],
    );
    assert_eq!(code(&out), 0);
    let out = run(dir.path(), &["--out", "res", "baseline", "--method", "bh", "--p", "sim/p_rep0"]);
    assert_eq!(code(&out), 0);
    let out = run(dir.path(), &["metrics", "--rejections", "res/bh", "--truth", "other/h"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("dims"));
}

#[test]
fn wrong_volume_kind_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    simulate_small(dir.path());
    // A statistic file is not a p-value file.
    let out = run(dir.path(), &["baseline", "--method", "bh", "--p", "sim/x_rep0"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn deepfdr_missing_input_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    simulate_small(dir.path());
    let out = run(dir.path(), &["deepfdr", "--x", "sim/x_rep0", "--p", "missing"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn deepfdr_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    simulate_small(dir.path());
    std::fs::write(dir.path().join("tiny.json"), TINY_CONFIG).unwrap();
    let out = run(
        dir.path(),
        &["--config", "tiny.json", "--out", "dp", "deepfdr", "--x", "sim/x_rep0", "--p", "sim/p_rep0", "--save-model"],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let dp = dir.path().join("dp");
    let rej = load_volume(&dp.join("deepfdr")).unwrap();
    let lis = load_volume(&dp.join("deepfdr_scores")).unwrap();
    assert_eq!(rej.dims(), [12, 12, 12]);
    assert!(lis.data().iter().all(|v| (0.0..=1.0).contains(v)));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dp.join("deepfdr.json")).unwrap()).unwrap();
    assert_eq!(summary["method"], "deepfdr");
    assert!(summary["flip_applied"].is_boolean());
    assert!(summary["alpha_q_used"].is_number());
    assert_eq!(summary["k"].as_u64().unwrap() as f64, rej.data().iter().sum::<f64>());
    let log = std::fs::read_to_string(dp.join("training_log.csv")).unwrap();
    assert_eq!(log.lines().next(), Some("epoch,ncut_loss,recon_loss,wall_ms"));
    assert_eq!(log.lines().count(), 4);
    assert!(dp.join("wnet.ckpt").exists());
}

#[test]
fn bench_output_is_independent_of_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.json"), TINY_CONFIG).unwrap();
    for (workers, out) in [("1", "w1"), ("3", "w3")] {
        let o = run(dir.path(), &["--config", "tiny.json", "--workers", workers, "--out", out, "bench"]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    for f in ["rows.csv", "aggregate.csv"] {
        let a = std::fs::read(dir.path().join("w1").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("w3").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs");
    }
    let rows = std::fs::read_to_string(dir.path().join("w1/rows.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + 3 * 4);
    assert!(rows.starts_with("setting_id,mu1,sigma1sq,p1,method,rep,seed,FDP,FNP,TP,R,runtime_ms\n"));
}

#[test]
fn config_rejects_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.json"), r#"{"alpha": 0.1, "epochs": 3}"#).unwrap();
    let out = run(dir.path(), &["--config", "bad.json", "bench"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("epochs"));
}

#[test]
fn flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    simulate_small(dir.path());
    std::fs::write(dir.path().join("c.json"), r#"{"alpha": 0.5}"#).unwrap();
    let out = run(
        dir.path(),
        &["--config", "c.json", "--alpha", "0.05", "--out", "r", "baseline", "--method", "bh", "--p", "sim/p_rep0"],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("r/bh.json")).unwrap()).unwrap();
    assert_eq!(summary["alpha"], 0.05);
}

#[test]
fn alpha_out_of_range_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["--alpha", "1.5", "simulate"]);
    assert_eq!(code(&out), 2);
}
