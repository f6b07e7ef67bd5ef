use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn symtaylor(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_symtaylor"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn symtaylor")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = symtaylor(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn csv_shape(path: &Path) -> (Vec<String>, usize) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(str::to_owned).collect();
    (header, r.records().count())
}

fn read_json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

#[test]
fn pendulum_pipeline_writes_expected_files() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.json"), r#"{"train": {"epochs": 4}, "data": {"n_test": 3}}"#).unwrap();
    for cmd in ["gen", "train", "eval"] {
        ok(dir.path(), &["--config", "run.json", "--out", "run", cmd]);
    }
    let out = dir.path().join("run");

    let (header, rows) = csv_shape(&out.join("train.csv"));
    assert_eq!(header, ["q0_0", "p0_0", "qn_0", "pn_0"]);
    assert_eq!(rows, 15);
    assert_eq!(csv_shape(&out.join("test.csv")).1, 3);

    let (header, rows) = csv_shape(&out.join("history.csv"));
    assert_eq!(header, ["epoch", "train_loss", "validation_loss", "validation_l1", "validation_mse", "lr"]);
    assert_eq!(rows, 4);

    let (header, rows) = csv_shape(&out.join("report.csv"));
    assert_eq!(header, ["step", "t", "epsilon", "H"]);
    assert_eq!(rows, 6283);

    let summary = read_json(&out.join("summary.json"));
    for key in [
        "epsilon_mean",
        "max_energy_dev",
        "symplecticity_defect",
        "steps",
        "complete",
        "failure",
        "probe_energy_dev",
        "probe_energy_slope",
    ] {
        assert!(summary.get(key).is_some(), "missing {key}");
    }
    assert_eq!(summary["steps"], 6283);
    assert!(read_json(&out.join("checkpoint.json")).is_object());
}

#[test]
fn oracle_evaluation_reproduces_the_analytic_flow() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.json"), r#"{"data": {"n_test": 4}, "eval": {"oracle": true}}"#).unwrap();
    ok(dir.path(), &["--config", "run.json", "--out", ".", "eval"]);
    let summary = read_json(&dir.path().join("summary.json"));
    assert!(summary["epsilon_mean"].as_f64().unwrap() < 1e-10, "{summary}");
    assert!(summary["symplecticity_defect"].as_f64().unwrap() < 1e-6);
}

#[test]
fn kepler_rows_hold_four_dimensional_states() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["--system", "kepler", "--out", ".", "gen"]);
    let (header, _) = csv_shape(&dir.path().join("train.csv"));
    assert_eq!(header.len(), 16);
    assert_eq!(header[0], "q0_0");
    assert_eq!(header[15], "pn_3");
}

#[test]
fn flags_override_the_document() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.json"), r#"{"seed": 3, "system": "kepler", "train": {"epochs": 2}}"#).unwrap();
    ok(dir.path(), &["--config", "run.json", "--seed", "9", "--system", "lotka-volterra", "--out", ".", "gen"]);
    let cfg = read_json(&dir.path().join("config.json"));
    assert_eq!(cfg["seed"], 9);
    assert_eq!(cfg["train"]["seed"], 9);
    assert_eq!(cfg["system"], "lotka_volterra");
    assert_eq!(cfg["train"]["system"], "lotka_volterra");
    assert_eq!(cfg["train"]["epochs"], 2);
}

#[test]
fn errors_are_reported_as_json() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.json"), r#"{"train": {"epochz": 2}}"#).unwrap();
    let out = symtaylor(dir.path(), &["--config", "bad.json", "gen"]);
    assert!(!out.status.success());
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert!(err["error"].is_string() && err["message"].as_str().unwrap().contains("epochz"), "{err}");

    let out = symtaylor(dir.path(), &["--out", ".", "eval"]);
    assert!(!out.status.success());
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "io");
}

#[test]
fn nbody_run_writes_trajectories() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("run.json"),
        r#"{"nbody": {"t_predict": 0.5, "dt": 0.05, "pair": {"epochs": 2, "n_train": 4}}}"#,
    )
    .unwrap();
    ok(dir.path(), &["--config", "run.json", "--out", ".", "nbody"]);
    let (header, rows) = csv_shape(&dir.path().join("trajectory.csv"));
    assert_eq!(header.len(), 1 + 3 * 4);
    assert_eq!(rows, 11);
    assert_eq!(csv_shape(&dir.path().join("truth.csv")), (header, rows));
    let report = read_json(&dir.path().join("report.json"));
    assert_eq!(report["n_body"], 3);
    assert_eq!(report["steps"], 10);
    assert!(report["pair_train_loss"].as_f64().unwrap().is_finite());
    assert!(report["symplecticity_defect"].as_f64().unwrap() < 1e-6);
}

#[test]
fn ablation_merges_histories() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("run.json"),
        r#"{"train": {"epochs": 3}, "ablate": {"axis": "hidden_width", "values": [4, 8], "window": 2}}"#,
    )
    .unwrap();
    ok(dir.path(), &["--config", "run.json", "--out", ".", "ablate"]);
    let (header, rows) = csv_shape(&dir.path().join("ablation.csv"));
    assert_eq!(rows, 3);
    assert_eq!(header.len(), 7);
    assert_eq!(header[1], "h4_train_loss");
    let summary = read_json(&dir.path().join("ablation_summary.json"));
    assert_eq!(summary.as_array().unwrap().len(), 2);
    assert_eq!(summary[1]["label"], "h8");
}
