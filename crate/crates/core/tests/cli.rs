mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_zoomground"))
        .args(args)
        .env_remove("R_VLM_BACKEND_URL")
        .env_remove("R_VLM_BACKEND_TOKEN")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn diagnostic(out: &Output) -> Value {
    let line = String::from_utf8_lossy(&out.stderr).lines().last().unwrap_or_default().to_string();
    serde_json::from_str(&line).unwrap_or_else(|e| panic!("{line:?}: {e}"))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn dataset(dir: &Path, n: usize) -> std::path::PathBuf {
    let path = dir.join("data.jsonl");
    zoomground::dataset::write_jsonl(&path, &common::sim_records(n, 5, 1280, 720)).unwrap();
    path
}

#[test]
fn no_arguments_is_a_usage_error() {
    let out = run(&[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stdout.is_empty() || !out.stderr.is_empty());
}

#[test]
fn usage_errors_exit_two_with_json_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let bad_key = dir.path().join("bad_key.toml");
    fs::write(&bad_key, "[gen_pseudo]\nnumber = 3\n").unwrap();
    let bad_toml = dir.path().join("bad.toml");
    fs::write(&bad_toml, "[gen_pseudo\n").unwrap();
    let missing = dir.path().join("none.toml");

    for args in [
        vec!["gen-pseudo", "--gt", "0.1,0.1,0.3,0.3", "--bogus"],
        vec!["--config", p(&bad_key), "gen-pseudo", "--gt", "0.1,0.1,0.3,0.3"],
        vec!["--config", p(&bad_toml), "gen-pseudo", "--gt", "0.1,0.1,0.3,0.3"],
        vec!["--config", p(&missing), "gen-pseudo", "--gt", "0.1,0.1,0.3,0.3"],
        vec!["gen-pseudo", "--gt", "0.1,0.1,0.3,0.3", "--threshold", "2"],
        vec!["gen-pseudo"],
    ] {
        let out = run(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert_eq!(diagnostic(&out)["error"], "usage", "{args:?}");
    }
}

#[test]
fn malformed_dataset_line_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.jsonl");
    fs::write(&data, "{\"image_path\": \"a.png\"}\n").unwrap();
    let out = run(&["--out-dir", p(dir.path()), "evaluate", "--dataset", p(&data)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(diagnostic(&out)["message"].as_str().unwrap().contains("d.jsonl:1"));
}

#[test]
fn gen_pseudo_is_seeded() {
    let args = ["--seed", "7", "gen-pseudo", "--gt", "0.2,0.2,0.5,0.4", "--n", "3"];
    let a = ok(&args);
    assert_eq!(a, ok(&args));
    let v: Value = serde_json::from_str(a.trim()).unwrap();
    assert_eq!(v["boxes"].as_array().unwrap().len(), 3);
    assert_eq!(v["seed"], 7);
    assert!(v["gious"].as_array().unwrap().iter().all(|g| g.as_f64().unwrap() >= zoomground::pseudo_label::DEFAULT_THRESHOLD));
}

#[test]
fn ground_uses_config_file_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(
        &cfg,
        "[global]\nseed = 3\n[ground]\nstages = 3\ndims = \"1920x1080\"\ngt = [0.4, 0.4, 0.45, 0.43]\n[backend]\nkind = \"sim\"\nnoise_scale = 0.02\n",
    )
    .unwrap();
    let three: Value = serde_json::from_str(&ok(&["--config", p(&cfg), "ground", "--instruction", "ok"])).unwrap();
    assert_eq!(three["stages"].as_array().unwrap().len(), 3);
    let out = dir.path().join("out");
    let two: Value = serde_json::from_str(&ok(&["--config", p(&cfg), "--out-dir", p(&out), "ground", "--stages", "2"])).unwrap();
    assert_eq!(two["stages"].as_array().unwrap().len(), 2);
    assert_eq!(two["backend_calls"], 2);
    let resolved: toml::Table = toml::from_str(&fs::read_to_string(out.join("resolved_config.toml")).unwrap()).unwrap();
    assert_eq!(resolved["ground"]["stages"].as_integer(), Some(2));
    assert_eq!(resolved["global"]["seed"].as_integer(), Some(3));
    assert_eq!(resolved["backend"]["noise_scale"].as_float(), Some(0.02));
    assert!(out.join("ground.json").exists());
}

#[test]
fn evaluate_and_analyze_agree() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), 30);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["--seed", "11", "--jobs", "0", "evaluate", "--dataset", p(&data), "--report-dir", p(&a), "--stages", "2"]);
    ok(&["--seed", "11", "evaluate", "--dataset", p(&data), "--report-dir", p(&b), "--stages", "2"]);
    let report = fs::read(a.join("report.json")).unwrap();
    assert_eq!(report, fs::read(b.join("report.json")).unwrap());
    for f in ["records.jsonl", "latency.json", "iou_histogram.csv", "size_deciles.csv", "accuracy_by_group.csv", "resolved_config.toml"] {
        assert!(a.join(f).exists(), "{f}");
    }
    let analysis: Value = serde_json::from_str(&ok(&["analyze", "--records", p(&a)])).unwrap();
    let report: Value = serde_json::from_slice(&report).unwrap();
    assert_eq!(analysis, report);
    assert_eq!(report["samples"], 30);
    assert_eq!(report["backend_calls"], 60);
}

#[test]
fn pseudo_labels_feed_training_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), 4);
    let pseudo = dir.path().join("pseudo.jsonl");
    ok(&["gen-pseudo", "--input", p(&data), "--n", "2", "--threshold", "0.3", "--out", p(&pseudo)]);
    assert_eq!(fs::read_to_string(&pseudo).unwrap().lines().count(), 4);
    let out = dir.path().join("train");
    ok(&["--out-dir", p(&out), "emit-train-artifacts", "--in", p(&pseudo), "--prefix", "click: ", "--dense-mask"]);
    let manifest: Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["count"], 4);
    let art = zoomground::training_artifacts::TrainingArtifact::read(&out.join("artifacts/000000.json")).unwrap();
    art.validate().unwrap();
    assert_eq!(art.layout().box_spans.len(), 3);
}

#[test]
fn gen_zoom_data_writes_resolved_config() {
    let dir = tempfile::tempdir().unwrap();
    let data = common::write_corpus(&dir.path().join("corpus"), 5, 8, 160, 100);
    let out = dir.path().join("zoom");
    let stats: Value = serde_json::from_str(&ok(&["--seed", "2", "gen-zoom-data", "--in", p(&data), "--out", p(&out), "--k", "2"])).unwrap();
    assert!(stats.is_object());
    let resolved: toml::Table = toml::from_str(&fs::read_to_string(out.join("resolved_config.toml")).unwrap()).unwrap();
    assert_eq!(resolved["gen_zoom_data"]["k"].as_array().unwrap()[0].as_float(), Some(2.0));
    assert!(out.join("zoom_data.jsonl").exists());
}
