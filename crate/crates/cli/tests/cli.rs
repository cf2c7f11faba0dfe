use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use wst_core::toytrain::ExperimentConfig;

fn wst(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wst"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok_json(args: &[&str], dir: &Path) -> Value {
    let out = wst(args, dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn uniform_tensor(dir: &Path) {
    fs::write(
        dir.join("u.json"),
        r#"{"T":2,"U":1,"V":3,"kind":"logits","data":[0,0,0,0,0,0,0,0,0,0,0,0]}"#,
    )
    .unwrap();
}

fn tiny_config(dir: &Path) {
    let mut cfg = ExperimentConfig::default();
    cfg.task.train_size = 24;
    cfg.task.eval_size = 6;
    cfg.optimizer.epochs = 1;
    fs::write(dir.join("cfg.json"), serde_json::to_string(&cfg).unwrap()).unwrap();
}

#[test]
fn rnnt_graph_counts() {
    let d = tempfile::tempdir().unwrap();
    let g = ok_json(&["graph", "--type", "rnnt", "--tokens", "1,2,3", "--frames", "4", "--out", "json"], d.path());
    assert_eq!(g["num_states"], 18);
    assert_eq!(g["arcs"].as_array().unwrap().len(), 26);
    let g = ok_json(&["graph", "--type", "wst", "--tokens", "1,2,3", "--frames", "4"], d.path());
    assert_eq!(g["arcs"].as_array().unwrap().len(), 50);
}

#[test]
fn empty_transcript_graph() {
    let d = tempfile::tempdir().unwrap();
    let g = ok_json(&["graph", "--type", "transcript", "--tokens", ""], d.path());
    assert_eq!(g["num_states"], 2);
}

#[test]
fn ws_transcript_dot_self_loops() {
    let d = tempfile::tempdir().unwrap();
    let out = wst(&["graph", "--type", "ws-transcript", "--tokens", "1", "--out", "dot"], d.path());
    assert!(out.status.success());
    let dot = String::from_utf8(out.stdout).unwrap();
    let loops: Vec<&str> = dot
        .lines()
        .filter_map(|l| {
            let (a, rest) = l.trim().split_once(" -> ")?;
            let b = rest.split_whitespace().next()?;
            (a == b).then_some(a)
        })
        .collect();
    // chain states 0 and 1, one loop each
    assert_eq!(loops, vec!["0", "1"]);
}

#[test]
fn loss_worked_example() {
    let d = tempfile::tempdir().unwrap();
    uniform_tensor(d.path());
    let r = ok_json(&["loss", "--criterion", "rnnt", "--tensor", "u.json", "--tokens", "1"], d.path());
    assert!((r["loss"].as_f64().unwrap() - 2.602690).abs() < 1e-6);
    assert!(r.get("grad").is_none());
    let w = ok_json(
        &["loss", "--criterion", "wst", "--tensor", "u.json", "--tokens", "1", "--lambda1", "0", "--lambda2", "0", "--grad"],
        d.path(),
    );
    assert!((w["loss"].as_f64().unwrap() - 1.216395).abs() < 1e-6);
    assert_eq!(w["grad"].as_array().unwrap().len(), 12);
}

#[test]
fn loss_oracle_discrepancy() {
    let d = tempfile::tempdir().unwrap();
    fs::write(
        d.path().join("t.json"),
        r#"{"T":3,"U":2,"V":4,"kind":"logits","data":[0.3,-1.2,0.8,2.0,1.1,0.0,-0.4,0.9,-2.0,0.5,0.5,1.5,0.1,0.2,0.3,0.4,-1.0,1.0,-1.0,1.0,2.5,-0.5,0.0,0.7,0.6,0.6,-0.6,-0.6,1.3,-1.3,0.2,0.0,0.9,0.1,-0.9,0.4]}"#,
    )
    .unwrap();
    for criterion in ["rnnt", "wst"] {
        let r = ok_json(&["loss", "--criterion", criterion, "--tensor", "t.json", "--tokens", "3,1", "--oracle"], d.path());
        assert!(r["oracle_discrepancy"].as_f64().unwrap() <= 1e-10);
    }
}

#[test]
fn lambda_accepts_negative_infinity() {
    let d = tempfile::tempdir().unwrap();
    uniform_tensor(d.path());
    let args = ["loss", "--criterion", "wst", "--tensor", "u.json", "--tokens", "1", "--lambda1", "-inf", "--lambda2", "-inf"];
    let w = ok_json(&args, d.path());
    assert!((w["loss"].as_f64().unwrap() + (2.0f64 / 27.0).ln()).abs() < 1e-12);
}

#[test]
fn corrupt_at_rate_zero_is_identity() {
    let d = tempfile::tempdir().unwrap();
    let text = "{\"id\":\"a\",\"tokens\":[1,2,3]}\n{\"id\":7,\"tokens\":[]}\n";
    fs::write(d.path().join("in.jsonl"), text).unwrap();
    let out = wst(
        &["corrupt", "--input", "in.jsonl", "--kind", "mixed", "--rate", "0", "--vocab-size", "5"],
        d.path(),
    );
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap(), text);
}

#[test]
fn score_identical_files() {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("r.jsonl"), "{\"id\":1,\"tokens\":[1,2]}\n{\"id\":2,\"tokens\":[3]}\n").unwrap();
    let r = ok_json(&["score", "--reference", "r.jsonl", "--hypothesis", "r.jsonl"], d.path());
    assert_eq!(r["rate"], 0.0);
    assert_eq!(r["ref_tokens"], 3);
}

#[test]
fn score_reports_edit_breakdown() {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("r.jsonl"), "{\"id\":1,\"tokens\":[1,2,3,4]}\n").unwrap();
    fs::write(d.path().join("h.jsonl"), "{\"id\":1,\"tokens\":[1,5,3]}\n").unwrap();
    let r = ok_json(&["score", "--reference", "r.jsonl", "--hypothesis", "h.jsonl"], d.path());
    assert_eq!((r["subs"].as_u64(), r["dels"].as_u64(), r["ins"].as_u64()), (Some(1), Some(1), Some(0)));
    assert_eq!(r["rate"], 0.5);
}

#[test]
fn train_writes_report() {
    let d = tempfile::tempdir().unwrap();
    tiny_config(d.path());
    let out = wst(&["train", "--config", "cfg.json", "--output", "rep.json"], d.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rep: Value = serde_json::from_str(&fs::read_to_string(d.path().join("rep.json")).unwrap()).unwrap();
    for key in ["config", "epochs", "eval_wer", "realized_error_rate", "criterion"] {
        assert!(rep.get(key).is_some(), "missing {key}");
    }
}

#[test]
fn sweep_full_grid_and_resume() {
    let d = tempfile::tempdir().unwrap();
    tiny_config(d.path());
    let out = wst(&["sweep", "--config", "cfg.json", "--output", "s.jsonl"], d.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let full = fs::read_to_string(d.path().join("s.jsonl")).unwrap();
    assert_eq!(full.lines().count(), 40);

    // drop the tail as if interrupted, then resume
    let head: String = full.lines().take(13).map(|l| format!("{l}\n")).collect();
    fs::write(d.path().join("s.jsonl"), head).unwrap();
    let out = wst(&["sweep", "--config", "cfg.json", "--output", "s.jsonl", "--resume"], d.path());
    assert!(out.status.success());
    assert_eq!(fs::read_to_string(d.path().join("s.jsonl")).unwrap(), full);
}

#[test]
fn usage_errors_exit_2() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(wst(&["graph", "--type", "bogus"], d.path()).status.code(), Some(2));
    assert_eq!(wst(&["frobnicate"], d.path()).status.code(), Some(2));
    assert_eq!(wst(&["loss", "--tensor", "x.json"], d.path()).status.code(), Some(2));
}

#[test]
fn domain_errors_exit_1() {
    let d = tempfile::tempdir().unwrap();
    uniform_tensor(d.path());
    // U disagrees with the tensor
    let out = wst(&["loss", "--criterion", "rnnt", "--tensor", "u.json", "--tokens", "1,2"], d.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("shape mismatch"));
    assert!(out.stdout.is_empty());
    // token outside the vocabulary
    let out = wst(&["loss", "--criterion", "rnnt", "--tensor", "u.json", "--tokens", "7"], d.path());
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(wst(&["loss", "--criterion", "rnnt", "--tensor", "missing.json", "--tokens", "1"], d.path()).status.code(), Some(1));
    let out = wst(&["graph", "--type", "rnnt", "--tokens", "1"], d.path());
    assert_eq!(out.status.code(), Some(1));
    let out = wst(&["graph", "--type", "wst", "--tokens", "1", "--frames", "2", "--lambda1", "nan"], d.path());
    assert_eq!(out.status.code(), Some(1));
}
