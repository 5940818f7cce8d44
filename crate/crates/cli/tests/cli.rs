use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn clc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_clc"))
        .args(args)
        .env("CLC_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn json_lines(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

const SMALL: &str = "epochs = 6\nbatch_size = 32\nhidden = 16,16\nclusters = 3\ninstance_dim = 8\nseed = 5\n";
const SMALL_DATA: &str = "gmm:k=3,n=40,d=6,sep=8,seed=2";

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let out = out.to_str().unwrap();
    assert_eq!(code(&clc(&["train", "--data", SMALL_DATA, "--out", out])), 2);
    assert_eq!(code(&clc(&["train", "--config", "/missing.cfg", "--data", SMALL_DATA, "--out", out])), 2);
    let bad = write_config(dir.path(), "bad.cfg", "t = 0.5\ntau = 0.2\n");
    let r = clc(&["train", "--config", &bad, "--data", SMALL_DATA, "--out", out]);
    assert_eq!(code(&r), 2);
    assert!(String::from_utf8_lossy(&r.stderr).contains("t"));
    let cfg = write_config(dir.path(), "ok.cfg", SMALL);
    assert_eq!(code(&clc(&["train", "--config", &cfg, "--data", "gmm:k=x", "--out", out])), 2);
    assert_eq!(code(&clc(&["train", "--config", &cfg, "--data", SMALL_DATA, "--out", out, "--bogus"])), 2);
    assert_eq!(code(&clc(&["gradcheck", "--trials", "0"])), 2);
    assert_eq!(code(&clc(&["frobnicate"])), 2);
}

#[test]
fn train_writes_artifacts_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.cfg", SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let r = clc(&["train", "--config", &cfg, "--data", SMALL_DATA, "--holdout", "0.25", "--out", out.to_str().unwrap()]);
        assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    }
    for f in ["config.txt", "metrics.jsonl", "model.ck"] {
        assert!(a.join(f).exists(), "{f}");
    }
    assert_eq!(
        std::fs::read(a.join("metrics.jsonl")).unwrap(),
        std::fs::read(b.join("metrics.jsonl")).unwrap()
    );
    assert_eq!(std::fs::read(a.join("model.ck")).unwrap(), std::fs::read(b.join("model.ck")).unwrap());
    let lines = json_lines(&a.join("metrics.jsonl"));
    assert_eq!(lines[0]["type"], "header");
    assert_eq!(lines[0]["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(lines[0]["config"]["epochs"], "6");
    assert!(lines.iter().any(|l| l["name"] == "holdout_acc"));
    assert!(std::fs::read_to_string(a.join("config.txt")).unwrap().contains("# clc "));
}

#[test]
fn eval_on_training_split_matches_final_record() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.cfg", SMALL);
    let out = dir.path().join("run");
    let r = clc(&["train", "--config", &cfg, "--data", SMALL_DATA, "--holdout", "0.25", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&r), 0);
    let last_epoch = json_lines(&out.join("metrics.jsonl"))
        .into_iter()
        .filter(|l| l["type"] == "epoch")
        .last()
        .unwrap();
    let ck = out.join("model.ck");
    let r = clc(&[
        "eval",
        "--checkpoint",
        ck.to_str().unwrap(),
        "--data",
        SMALL_DATA,
        "--holdout",
        "0.25",
        "--split",
        "train",
    ]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let report: Value = serde_json::from_slice(&r.stdout).unwrap();
    assert_eq!(report["metrics"]["acc"], last_epoch["acc"]);
    assert_eq!(report["metrics"]["nmi"], last_epoch["nmi"]);
    assert_eq!(report["entropy"], last_epoch["entropy"]);
    assert_eq!(report["n"], 90);
    assert_eq!(report["config"]["seed"], "5");
}

#[test]
fn unlabeled_eval_reports_entropy_and_stats_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.cfg", SMALL);
    let out = dir.path().join("run");
    assert_eq!(code(&clc(&["train", "--config", &cfg, "--data", SMALL_DATA, "--out", out.to_str().unwrap()])), 0);
    let labelled = dir.path().join("labelled.csv");
    assert_eq!(code(&clc(&["gen-data", "--spec", SMALL_DATA, "--out", labelled.to_str().unwrap()])), 0);
    let ck = out.join("model.ck");
    // Reading the label column as a feature changes the width.
    let r = clc(&["eval", "--checkpoint", ck.to_str().unwrap(), "--data", labelled.to_str().unwrap(), "--labels", "no"]);
    assert_eq!(code(&r), 2);
    let csv = dir.path().join("plain.csv");
    let features: String = std::fs::read_to_string(&labelled)
        .unwrap()
        .lines()
        .map(|l| format!("{}\n", &l[..l.rfind(',').unwrap()]))
        .collect();
    std::fs::write(&csv, features).unwrap();
    let r = clc(&["eval", "--checkpoint", ck.to_str().unwrap(), "--data", csv.to_str().unwrap()]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let report: Value = serde_json::from_slice(&r.stdout).unwrap();
    assert!(report["metrics"].is_null());
    assert!(report["entropy"].as_f64().unwrap() >= 0.0);
    assert!(report["stats"]["zn"]["augmented"]["mean"].is_number());
    assert!(report["stats"]["zc"]["same"].is_null());
}

#[test]
fn gradcheck_passes_and_detects_injected_fault() {
    let r = clc(&["gradcheck", "--trials", "4"]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stdout));
    let text = String::from_utf8_lossy(&r.stdout);
    assert_eq!(text.lines().filter(|l| l.starts_with("ok")).count(), 4);
    assert!(text.contains("worst"));
    let r = clc(&["gradcheck", "--trials", "2", "--inject-fault"]);
    assert_eq!(code(&r), 1);
    assert!(String::from_utf8_lossy(&r.stdout).contains("FAIL"));
}

#[test]
fn sinkhorn_on_uniform_logits_gives_uniform_plan() {
    let dir = tempfile::tempdir().unwrap();
    let logits = dir.path().join("logits.csv");
    std::fs::write(&logits, "0.3,0.3,0.3\n".repeat(6)).unwrap();
    let plan = dir.path().join("q.csv");
    let r = clc(&["sinkhorn", "--logits", logits.to_str().unwrap(), "--out", plan.to_str().unwrap()]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let text = std::fs::read_to_string(&plan).unwrap();
    assert!(text.starts_with("# clc "));
    let values: Vec<f64> = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .flat_map(|l| l.split(',').map(|v| v.parse::<f64>().unwrap()).collect::<Vec<_>>())
        .collect();
    assert_eq!(values.len(), 18);
    assert!(values.iter().all(|v| (v - 1.0 / 18.0).abs() < 1e-15));
    let summary: Value = serde_json::from_slice(&r.stdout).unwrap();
    assert_eq!(summary["iterations"], 3);
}

#[test]
fn gen_data_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    for p in [&a, &b] {
        assert_eq!(code(&clc(&["gen-data", "--spec", "rings:k=2,n=50,seed=4", "--out", p.to_str().unwrap()])), 0);
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let meta: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("a.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["n"], 100);
    assert_eq!(meta["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(code(&clc(&["gen-data", "--spec", "gmm:k=1", "--out", a.to_str().unwrap()])), 2);
}

#[test]
fn resume_continues_from_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.cfg", SMALL);
    let first = dir.path().join("first");
    assert_eq!(code(&clc(&["train", "--config", &cfg, "--data", SMALL_DATA, "--out", first.to_str().unwrap()])), 0);
    let ck = first.join("model.ck");
    let again = dir.path().join("again");
    let r = clc(&[
        "train",
        "--config",
        &cfg,
        "--data",
        SMALL_DATA,
        "--out",
        again.to_str().unwrap(),
        "--resume",
        ck.to_str().unwrap(),
    ]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    // Already complete: nothing to train, same model.
    assert_eq!(std::fs::read(&ck).unwrap(), std::fs::read(again.join("model.ck")).unwrap());
    let r = clc(&[
        "train", "--config", &cfg, "--data", SMALL_DATA, "--out", again.to_str().unwrap(), "--resume",
        ck.to_str().unwrap(), "--set", "alpha=1",
    ]);
    assert_eq!(code(&r), 2);
}

#[test]
fn stats_on_benchmark_checkpoint_keep_ordering() {
    // Benchmark-scale model: four well-separated clusters, default config.
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bench.cfg", "seed = 0\n");
    let data = "gmm:k=4,n=500,d=16,sep=10,seed=100";
    let out = dir.path().join("bench");
    let r = clc(&["train", "--config", &cfg, "--data", data, "--holdout", "0.2", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let ck = out.join("model.ck");
    let r = clc(&["stats", "--checkpoint", ck.to_str().unwrap(), "--data", data, "--holdout", "0.2"]);
    assert_eq!(code(&r), 0);
    let s: Value = serde_json::from_slice(&r.stdout).unwrap();
    let m = |part: &str, cell: &str| s["stats"][part][cell]["mean"].as_f64().unwrap();
    assert!(m("zc", "same") > m("zc", "different") + 0.1, "{s}");
    assert!(m("zn", "augmented") > m("zn", "same") + 0.3, "{s}");
}
