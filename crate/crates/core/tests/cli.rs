use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn riskqa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_riskqa")).args(args).output().expect("spawn riskqa")
}

fn write_config(dir: &Path, name: &str, value: Value) -> String {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(&value).unwrap()).unwrap();
    path.to_string_lossy().into_owned()
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("json on stdout")
}

#[test]
fn baseline_prepare_train_evaluate() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let config = write_config(
        tmp.path(),
        "lr.json",
        json!({
            "dataset": {"source": "synth", "labels": ["yes", "no"], "per_class": 100, "separability": 0.9},
            "model": {"family": "baseline", "kind": "logistic"},
            "train": {"epochs": 30},
            "out_dir": "unused",
            "seed": 4
        }),
    );
    let out_s = out.to_str().unwrap();
    let common = ["--config", config.as_str(), "--out", out_s];

    let prep = stdout_json(&riskqa(&[&["prepare"][..], &common].concat()));
    assert_eq!(prep["train"]["n"].as_u64().unwrap() + prep["test"]["n"].as_u64().unwrap(), 200);
    assert!(out.join("train.jsonl").exists() && out.join("test.jsonl").exists());

    stdout_json(&riskqa(&[&["train"][..], &common].concat()));
    assert!(out.join("model.json").exists());

    let report = stdout_json(&riskqa(&[&["evaluate"][..], &common].concat()));
    assert_eq!(report["model"], "logistic+tfidf");
    assert!(report["f1"].as_f64().unwrap() > 80.0);
    let text = fs::read_to_string(out.join("report.txt")).unwrap();
    assert!(text.contains("logistic+tfidf"));

    // The effective configuration records the override.
    let effective: Value = serde_json::from_str(&fs::read_to_string(out.join("config.json")).unwrap()).unwrap();
    assert_eq!(effective["out_dir"], out_s);
}

#[test]
fn privacy_check_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(
        tmp.path(),
        "qa.json",
        json!({
            "dataset": {"source": "synth", "labels": ["yes", "no"], "per_class": 10, "separability": 0.9},
            "model": {"family": "qa", "preset": "tiny"},
            "privacy": {"epsilon": 1.0, "delta": 1e-5, "clip_norm": 1.0, "noise_std": 1.0, "n": 1000},
            "out_dir": tmp.path().join("out"),
            "seed": 0
        }),
    );

    let ok = riskqa(&["privacy-check", "--config", &config]);
    let cert = stdout_json(&ok);
    assert_eq!(cert["verdict"], "private");
    assert!((cert["max_noise_std"].as_f64().unwrap() - 4.908051).abs() < 1e-6);

    let loud = riskqa(&["privacy-check", "--config", &config, "--noise-std", "10"]);
    assert_eq!(loud.status.code(), Some(2));
    let cert: Value = serde_json::from_slice(&loud.stdout).unwrap();
    assert_eq!(cert["verdict"], "not_private");
    assert!(tmp.path().join("out").join("privacy.json").exists());
}

#[test]
fn errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = riskqa(&["train", "--config", tmp.path().join("nope.json").to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).starts_with("error:"));

    let config = write_config(
        tmp.path(),
        "bad.json",
        json!({
            "dataset": {"source": "synth", "labels": ["yes", "no"], "per_class": 10, "separability": 0.9},
            "model": {"family": "baseline", "kind": "logistic"},
            "privacy": {"epsilon": 1.0, "delta": 1e-5, "clip_norm": 1.0},
            "out_dir": tmp.path().join("out")
        }),
    );
    assert_eq!(riskqa(&["prepare", "--config", &config]).status.code(), Some(1));

    let unknown = write_config(tmp.path(), "unknown.json", json!({"dataset": {}, "bogus": 1}));
    assert_eq!(riskqa(&["prepare", "--config", &unknown]).status.code(), Some(1));
}

#[test]
fn evaluate_before_train_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(
        tmp.path(),
        "c.json",
        json!({
            "dataset": {"source": "synth", "labels": ["a", "b", "c"], "per_class": 10, "separability": 0.9},
            "model": {"family": "baseline", "kind": "naive_bayes", "vectorizer": "count"},
            "out_dir": tmp.path().join("out")
        }),
    );
    stdout_json(&riskqa(&["prepare", "--config", &config]));
    assert_eq!(riskqa(&["evaluate", "--config", &config]).status.code(), Some(1));
}
