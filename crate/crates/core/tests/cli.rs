use std::path::Path;
use std::process::{Command, Output};

use votegraph::cli::RunManifest;
use votegraph::data::read_jsonl;
use votegraph::rules::RuleKind;

fn votegraph(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_votegraph"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen(out: &Path, label: &str, count: &str, seed: &str, n: (&str, &str), m: (&str, &str)) -> Output {
    votegraph(&[
        "gen", "--source", "dirichlet", "--count", count, "--seed", seed, "--label", label,
        "--n-min", n.0, "--n-max", n.1, "--m-min", m.0, "--m-max", m.1, "--out", s(out),
    ])
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(code(&votegraph(&[])), 1);
    assert_eq!(code(&votegraph(&["gen", "--count", "5"])), 1);
    assert_eq!(code(&votegraph(&["gen", "--source", "file", "--out", "x.jsonl"])), 1);
    assert_eq!(code(&votegraph(&["frobnicate"])), 1);
    assert_eq!(code(&votegraph(&["--help"])), 0);
}

#[test]
fn gen_is_deterministic_and_labels_rederive() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
    for p in [&a, &b] {
        let out = gen(p, "rule:borda", "100", "7", ("3", "10"), ("2", "5"));
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let manifest = RunManifest::read(&dir.path().join("a.jsonl.manifest.json")).unwrap();
    assert_eq!(manifest.command, "gen");
    assert_eq!(manifest.seed, 7);
    let data = read_jsonl(&a).unwrap();
    assert_eq!(data.len(), 100);
    for e in &data {
        assert_eq!(e.label, Some(RuleKind::Borda.apply(&e.ranking()).winner));
    }
}

#[test]
fn freeze_scenario_without_checkpoint_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.jsonl");
    assert_eq!(code(&gen(&data, "none", "8", "1", ("3", "4"), ("2", "3"))), 0);
    let out = votegraph(&[
        "train", "--mode", "adversarial", "--scenario", "robust-freeze", "--train", s(&data),
        "--valid", s(&data), "--epochs", "1", "--out-dir", s(dir.path()),
    ]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("pretrained"));
}

#[test]
fn corrupted_checkpoint_is_named_in_the_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.jsonl");
    assert_eq!(code(&gen(&data, "rule:plurality", "8", "1", ("3", "4"), ("2", "3"))), 0);
    let ckpt = dir.path().join("broken.ckpt.json");
    std::fs::write(&ckpt, "{\"format\": \"votegraph-checkpoint\", \"version\": 1, \"params\": [").unwrap();
    let out = votegraph(&["eval", "--checkpoint", s(&ckpt), "--data", s(&data), "--out-dir", s(dir.path())]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("broken.ckpt.json"));
}

#[test]
fn train_eval_audit_and_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let train = dir.path().join("train.jsonl");
    let valid = dir.path().join("valid.jsonl");
    assert_eq!(code(&gen(&train, "rule:plurality", "64", "1", ("3", "6"), ("2", "4"))), 0);
    assert_eq!(code(&gen(&valid, "rule:plurality", "16", "2", ("7", "7"), ("5", "5"))), 0);
    let run = dir.path().join("run");
    let out = votegraph(&[
        "train", "--mode", "mimic", "--rule", "plurality", "--train", s(&train), "--valid", s(&valid),
        "--epochs", "2", "--batch-size", "16", "--seed", "3", "--out-dir", s(&run),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("epoch,split,metric,value\n"));
    assert!(metrics.contains(",valid,accuracy,"));

    let ckpt = run.join("model.ckpt.json");
    let audit = votegraph(&["audit", "--checkpoint", s(&ckpt), "--data", s(&valid), "--out-dir", s(&run)]);
    assert_eq!(code(&audit), 0, "{}", String::from_utf8_lossy(&audit.stderr));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(run.join("audit.json")).unwrap()).unwrap();
    assert!(report["audit"]["anonymity"].as_f64().unwrap() < 1e-9);
    assert!(report["audit"]["neutrality"].as_f64().unwrap() < 1e-9);

    let eval = votegraph(&["eval", "--checkpoint", s(&ckpt), "--data", s(&valid), "--out-dir", s(&run)]);
    assert_eq!(code(&eval), 0, "{}", String::from_utf8_lossy(&eval.stderr));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(run.join("eval.json")).unwrap()).unwrap();
    let acc = report["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));

    let before = std::fs::read(run.join("metrics.csv")).unwrap();
    let rerun = votegraph(&["rerun", s(&run.join("manifest.json"))]);
    assert_eq!(code(&rerun), 0, "{}", String::from_utf8_lossy(&rerun.stderr));
    assert_eq!(std::fs::read(run.join("metrics.csv")).unwrap(), before);
}
