use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn coast(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coast")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn ok(args: &[&str]) {
    let out = coast(args);
    assert!(out.status.success(), "coast {args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn digest(p: &Path) -> String {
    hex::encode(Sha256::digest(fs::read(p).unwrap()))
}

const SMALL: &[&str] =
    &["--dim", "8", "--layers", "1", "--prototypes", "16", "--proj-dim", "8", "--batch-size", "1024"];

#[test]
fn synth_writes_dataset_and_labels() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    ok(&["synth", "--users", "200", "--overlap", "60", "--items", "150", "--seed", "1", "--out", s(&out)]);
    for f in ["interactions.tsv", "user_features.tsv", "item_features_S.tsv", "item_features_T.tsv", "labels.tsv"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let labels = fs::read_to_string(out.join("labels.tsv")).unwrap();
    assert_eq!(labels.lines().count(), 340);
    let (_, weights) = labels.lines().next().unwrap().split_once('\t').unwrap();
    assert_eq!(weights.split(',').count(), 8);
}

#[test]
fn train_twice_gives_identical_reports_and_eval_reproduces_them() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    ok(&["synth", "--users", "200", "--overlap", "60", "--items", "150", "--seed", "2", "--out", s(&data)]);
    let runs: Vec<_> = ["a", "b"].iter().map(|r| dir.path().join(r)).collect();
    for r in &runs {
        let mut args = vec!["train", "--data", s(&data), "--seed", "7", "--epochs", "2", "--out", s(r)];
        args.extend_from_slice(SMALL);
        ok(&args);
    }
    assert_eq!(digest(&runs[0].join("metrics.json")), digest(&runs[1].join("metrics.json")));
    assert_eq!(digest(&runs[0].join("model.bin")), digest(&runs[1].join("model.bin")));

    let eval_out = dir.path().join("eval");
    ok(&[
        "eval",
        "--checkpoint",
        s(&runs[0].join("model.bin")),
        "--split",
        s(&runs[0].join("split.json")),
        "--out",
        s(&eval_out),
    ]);
    assert_eq!(digest(&eval_out.join("metrics.json")), digest(&runs[0].join("metrics.json")));
}

#[test]
fn prepare_filters_and_featurizes() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("log.tsv");
    let mut rows = String::new();
    for u in 0..6 {
        for i in 0..4 {
            rows += &format!("u{u}\tm{i}\tS\t{}\t{}\n", 1 + (u + i) % 5, u * 10 + i);
            rows += &format!("u{u}\tb{i}\tT\t3\n");
        }
    }
    rows += "lonely\tm0\tS\t5\n";
    fs::write(&log, rows).unwrap();
    let attrs = dir.path().join("users.tsv");
    let mut t = String::from("id\tage\tcity\n");
    for u in 0..6 {
        t += &format!("u{u}\t{}\t{}\n", 20 + u, ["x", "y"][u % 2]);
    }
    fs::write(&attrs, t).unwrap();
    let out = dir.path().join("prepared");
    ok(&[
        "prepare",
        "--interactions",
        s(&log),
        "--user-attrs",
        s(&attrs),
        "--user-schema",
        "age:numeric,city:categorical",
        "--feature-dim",
        "4",
        "--min-interactions",
        "2",
        "--out",
        s(&out),
    ]);
    let stats: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("stats.json")).unwrap()).unwrap();
    assert_eq!(stats["total_users"], 6);
    let users = fs::read_to_string(out.join("user_features.tsv")).unwrap();
    assert_eq!(users.lines().count(), 6);
    assert!(users.lines().all(|l| l.split_once('\t').unwrap().1.split(',').count() == 4));
}

#[test]
fn bad_flags_print_usage_and_fail() {
    for args in [&["train", "--bogus"][..], &["frobnicate"], &["sweep", "--data", "x", "--axis", "width"], &[]] {
        let out = coast(args);
        assert!(!out.status.success(), "{args:?} succeeded");
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.contains("Usage") || err.contains("--help"), "{args:?} printed no usage hint");
    }
}

#[test]
fn missing_data_fails_cleanly() {
    let out = coast(&["train", "--data", "/nonexistent/coast"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("loading dataset"));
}
