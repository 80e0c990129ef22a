use std::path::Path;
use std::process::Command;

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

fn tiny_config(timeline: Value) -> Value {
    json!({
        "seed": 3,
        "world": { "k": 4, "n_clusters": 3, "n_samples": 200 },
        "domains": [
            { "id": "a", "obs_dim": 6, "rendering": "linear-orthogonal" },
            { "id": "b", "obs_dim": 6, "rendering": "linear-orthogonal" }
        ],
        "modules": {
            "latent_dim": 4,
            "train_rows": 120,
            "training": { "epochs": 5, "hidden": 8, "lr": 0.003, "batch_size": 32 }
        },
        "translator": {
            "dim": 4,
            "mode": "linear",
            "schedule": { "epochs": 3, "batch_size": 32, "lr": 0.001, "align": { "clusters": 3 } }
        },
        "timeline": timeline,
        "eval": { "seeds": [0], "gallery": 50 }
    })
}

fn write_config(dir: &Path, cfg: &Value) -> std::path::PathBuf {
    let path = dir.join("scenario.json");
    std::fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path
}

fn glw(args: &[&str], config: &Path, out: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_glw"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn manifest(out: &Path) -> Vec<String> {
    std::fs::read_to_string(out.join("MANIFEST"))
        .unwrap()
        .lines()
        .map(str::to_string)
        .collect()
}

fn hex_sha256(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[test]
fn missing_config_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = glw(&["run"], &dir.path().join("absent.json"), &dir.path().join("out"));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_field_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(json!([]));
    cfg["surprise"] = json!(1);
    let path = write_config(dir.path(), &cfg);
    let out = glw(&["gen-world"], &path, &dir.path().join("out"));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn manifest_lists_every_artifact_with_its_digest() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), &tiny_config(json!([])));
    let out_dir = dir.path().join("out");
    let out = glw(&["train-glw"], &path, &out_dir);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let lines = manifest(&out_dir);
    assert_eq!(lines[0], "status: ok");
    let names: Vec<&str> = lines[1..].iter().map(|l| l.split("  ").nth(1).unwrap()).collect();
    assert_eq!(names, ["world.csv", "modules.json", "translator.json"]);
    for line in &lines[1..] {
        let (digest, name) = line.split_once("  ").unwrap();
        assert_eq!(digest, hex_sha256(&std::fs::read(out_dir.join(name)).unwrap()));
    }
}

#[test]
fn failed_stage_keeps_partial_artifacts_and_names_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(json!([]));
    cfg["world"]["delta_sep"] = json!(1e6);
    let path = write_config(dir.path(), &cfg);
    let out_dir = dir.path().join("out");
    let out = glw(&["run"], &path, &out_dir);
    assert_eq!(out.status.code(), Some(3));
    let lines = manifest(&out_dir);
    assert!(lines[0].starts_with("status: failed at world"), "{}", lines[0]);
    assert_eq!(lines.len(), 1);
}

#[test]
fn empty_timeline_yields_training_metrics_only() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), &tiny_config(json!([])));
    let out_dir = dir.path().join("out");
    let out = glw(&["run", "--seed", "5"], &path, &out_dir);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let metrics: Value = serde_json::from_slice(&std::fs::read(out_dir.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["seed"], json!(5));
    assert_eq!(metrics["ticks"], json!([]));
    assert_eq!(metrics["translator"]["loss_curve"].as_array().unwrap().len(), 3);
    assert_eq!(std::fs::read_to_string(out_dir.join("trace.jsonl")).unwrap(), "");
    assert_eq!(manifest(&out_dir).len(), 1 + 6);
}

#[test]
fn ignition_suite_writes_eval_report() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), &tiny_config(json!([])));
    let out_dir = dir.path().join("out");
    let out = glw(&["eval", "--suite", "ignition"], &path, &out_dir);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_slice(&std::fs::read(out_dir.join("eval.json")).unwrap()).unwrap();
    assert_eq!(report["seeds"], json!([0]));
    assert!(report.get("alignment").is_none());
    assert_eq!(report["ignition"][0]["points"].as_array().unwrap().len(), 101);
}
