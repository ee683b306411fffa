use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn recmatch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_recmatch"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("report is json")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Simulates and trains a small market under `root`, returning the models dir.
fn trained(root: &Path, seed: &str) -> std::path::PathBuf {
    let sim = root.join("sim");
    let models = root.join("models");
    json(&recmatch(&[
        "simulate", "--dir", s(&sim), "--n-x", "30", "--n-y", "20", "--events-per-user", "8", "--seed", seed,
    ]));
    let report = json(&recmatch(&[
        "train",
        "--feedback",
        s(&sim.join("feedback.csv")),
        "--roster",
        s(&sim.join("roster.csv")),
        "--models",
        s(&models),
        "--epochs",
        "5",
        "--seed",
        seed,
    ]));
    assert_eq!(report["n_x"], 30);
    assert_eq!(report["n_y"], 20);
    models
}

#[test]
fn end_to_end_flow() {
    let dir = tempfile::tempdir().unwrap();
    let models = trained(dir.path(), "4");
    for f in ["model_xy.bin", "model_yx.bin", "roster.csv"] {
        assert!(models.join(f).exists(), "{f}");
    }

    let eq = dir.path().join("eq.csv");
    let solved = json(&recmatch(&["solve", "--models", s(&models), "--csv", s(&eq)]));
    assert_eq!(solved["converged"], true);
    assert_eq!(solved["mode"], "exact");
    let rows = std::fs::read_to_string(&eq).unwrap().lines().count();
    assert_eq!(rows, 1 + 30 * 20);

    let approx = json(&recmatch(&["solve", "--models", s(&models), "--approx"]));
    assert_eq!(approx["converged"], true);
    assert_ne!(approx["mode"], "exact");

    let rec = json(&recmatch(&["recommend", "--models", s(&models), "-k", "3", "--user", "m00000"]));
    assert_eq!(rec["ranked"].as_array().unwrap().len(), 3);

    let fused = json(&recmatch(&["fuse", "--models", s(&models), "--fusion", "geometric"]));
    assert!(fused.is_object());

    let metrics = json(&recmatch(&["metrics", "--models", s(&models), "-k", "5"]));
    assert!(metrics.to_string().contains("gini"));
}

#[test]
fn same_seed_gives_identical_lists() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let root = dir.path().join(name);
        let models = trained(&root, "11");
        let csv = root.join("lists.csv");
        json(&recmatch(&["recommend", "--models", s(&models), "-k", "4", "--csv", s(&csv)]));
        std::fs::read(csv).unwrap()
    };
    let a = run("a");
    assert!(!a.is_empty());
    assert_eq!(a, run("b"));
}

#[test]
fn exit_codes_distinguish_failures() {
    assert_eq!(recmatch(&["solve", "--bogus"]).status.code(), Some(1));
    assert_eq!(recmatch(&["solve", "--models", "/nonexistent/models"]).status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let models = trained(dir.path(), "4");
    let out = recmatch(&["solve", "--models", s(&models), "--max-sweeps", "1"]);
    assert_eq!(out.status.code(), Some(3));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["converged"], false);
}

#[test]
fn config_file_and_out_flag() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    std::fs::write(&config, "seed = 2\n[solver]\nmax_sweeps = 1\n").unwrap();
    let out = dir.path().join("report.json");
    let status = recmatch(&["verify", "--random", "3x4", "--config", s(&config), "--out", s(&out)]).status;
    assert_eq!(status.code(), Some(3), "one sweep cannot meet the tolerance");
    let report: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert!(report.is_object());

    std::fs::write(&config, "sede = 2\n").unwrap();
    assert_eq!(recmatch(&["verify", "--random", "3x4", "--config", s(&config)]).status.code(), Some(1));
}

#[test]
fn verify_random_market_passes() {
    let report = json(&recmatch(&["verify", "--random", "5x7", "--seed", "3"]));
    assert!(report.is_object());
}

#[test]
fn bench_reports_json() {
    let report = json(&recmatch(&["bench", "--sizes", "8x8,16x16", "--sweeps", "2", "--repeats", "1"]));
    assert!(report.is_object());
}
