use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_pipescan"));
    c.env_remove("PIPESCAN_OUT_ROOT");
    c
}

fn scene(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs/scenes")
        .join(name)
        .canonicalize()
        .unwrap()
}

/// A one-pipe config with a few seconds of simulated time.
fn short_config(dir: &Path) -> PathBuf {
    let path = dir.join("short.toml");
    fs::write(
        &path,
        format!(
            "seed = 3\nscene_file = {:?}\n\n[sim]\nmax_time_s = 2.0\n",
            scene("one_pipe.toml").to_str().unwrap()
        ),
    )
    .unwrap();
    path
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_writes_all_outputs() {
    let tmp = TempDir::new().unwrap();
    let cfg = short_config(tmp.path());
    let out = tmp.path().join("out");
    let o = run(&["run", "--config", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["ticks.csv", "plans.csv", "grid.txt", "summary.json", "config.toml"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["seed"], 3);
    assert_eq!(summary["termination"], "tick_budget");
    let ticks = fs::read_to_string(out.join("ticks.csv")).unwrap();
    let rows = ticks.lines().filter(|l| !l.starts_with('#')).count() - 1;
    assert_eq!(rows as u64, summary["ticks"].as_u64().unwrap());
}

#[test]
fn repeated_seed_is_byte_identical_and_never_overwrites() {
    let tmp = TempDir::new().unwrap();
    let cfg = short_config(tmp.path());
    let out = tmp.path().join("rep");
    for _ in 0..2 {
        let o = run(&["run", "--config", s(&cfg), "--seed", "9", "--out", s(&out)]);
        assert!(o.status.success());
    }
    let second = tmp.path().join("rep-1");
    assert!(second.is_dir());
    for f in ["ticks.csv", "plans.csv", "grid.txt", "summary.json"] {
        assert_eq!(fs::read(out.join(f)).unwrap(), fs::read(second.join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn out_root_applies_to_relative_paths() {
    let tmp = TempDir::new().unwrap();
    let cfg = short_config(tmp.path());
    let o = bin()
        .args(["run", "--config", s(&cfg), "--out", "nested/a"])
        .env("PIPESCAN_OUT_ROOT", tmp.path())
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(tmp.path().join("nested/a/summary.json").is_file());
}

#[test]
fn malformed_config_exits_2_without_output() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "[sim]\nrate_hz = -1.0\n").unwrap();
    let out = tmp.path().join("never");
    let o = run(&["run", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
    let stderr = String::from_utf8(o.stderr).unwrap();
    let record: serde_json::Value = serde_json::from_str(stderr.lines().last().unwrap()).unwrap();
    assert_eq!(record["error"], "config");
    assert_eq!(record["exit_code"], 2);

    let o = run(&["run", "--config", s(&tmp.path().join("missing.toml"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn validate_reports_table() {
    let o = run(&["validate", "--suite", "jacobians"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8(o.stdout).unwrap().contains("PASS"));
    let o = run(&["validate", "--suite", "nonsense"]);
    assert!(!o.status.success());
}

#[test]
fn batch_parallel_matches_serial() {
    let tmp = TempDir::new().unwrap();
    let cfg = short_config(tmp.path());
    let serial = tmp.path().join("serial");
    let parallel = tmp.path().join("parallel");
    let o = run(&["batch", "--config", s(&cfg), "--trials", "2", "--seed", "5", "--out", s(&serial)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = run(&[
        "batch", "--config", s(&cfg), "--trials", "2", "--seed", "5", "--parallel", "--out", s(&parallel),
    ]);
    assert!(o.status.success());
    for f in ["aggregate.csv", "trial-000/ticks.csv", "trial-001/summary.json"] {
        assert_eq!(fs::read(serial.join(f)).unwrap(), fs::read(parallel.join(f)).unwrap(), "{f} differs");
    }
    assert!(!serial.join("trial-002").exists());
}

#[test]
fn single_trial_batch_and_zero_rejected() {
    let tmp = TempDir::new().unwrap();
    let cfg = short_config(tmp.path());
    let out = tmp.path().join("one");
    let o = run(&["batch", "--config", s(&cfg), "--trials", "1", "--out", s(&out)]);
    assert!(o.status.success());
    assert!(out.join("aggregate.csv").is_file());
    let o = run(&["batch", "--config", s(&cfg), "--trials", "0"]);
    assert!(!o.status.success());
}
