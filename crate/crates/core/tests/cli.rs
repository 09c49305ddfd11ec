//! End-to-end runs of the `sysarg` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn sysarg(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sysarg"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

const CONFIG: &str = r#"
seeds = [1]
output_dir = "out"

[data]
train = "ds.jsonl"
max_eval_sequences = 8

[model]
tf_layers = 1
tf_ff = 16

[train]
max_epochs = 1
max_batches_per_epoch = 1
batch_size = 4
max_valid_sequences = 8

[mask]
zero_shot_positions = 2
"#;

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let o = sysarg(p, &["gen", "--seed", "3", "--events", "1600", "--out", "tr.jsonl", "--text", "tr.txt"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = sysarg(p, &["window", "--in", "tr.jsonl", "--len", "16", "--out", "ds.jsonl"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    fs::write(p.join("exp.toml"), CONFIG).unwrap();
    dir
}

#[test]
fn pipeline_train_eval_score() {
    let dir = workspace();
    let p = dir.path();
    let o = sysarg(p, &["ingest", "--in", "tr.txt", "--out", "back.jsonl"]);
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read_to_string(p.join("back.jsonl")).unwrap().lines().count(), 1600);

    let o = sysarg(p, &["train", "--config", "exp.toml", "--ablation", "none_cmp", "--out", "m.json"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["label"], "none_cmp");

    let o = sysarg(p, &["eval", "--checkpoint", "m.json", "--data", "ds.jsonl"]);
    assert_eq!(code(&o), 0);
    let m: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(m["predictions"], 100 * 15);

    let o = sysarg(p, &["score", "--checkpoint", "m.json", "--in", "tr.jsonl"]);
    assert_eq!(code(&o), 0);
    let out = String::from_utf8(o.stdout).unwrap();
    assert_eq!(out.lines().filter(|l| !l.starts_with('#')).count(), 100);
    assert!(out.starts_with("0\t"));

    fs::write(p.join("empty.jsonl"), "").unwrap();
    let o = sysarg(p, &["score", "--checkpoint", "m.json", "--in", "empty.jsonl"]);
    assert_eq!((code(&o), o.stdout.len()), (0, 0));

    // A dataset built with other vocabularies is refused.
    let o = sysarg(p, &["gen", "--seed", "4", "--events", "64", "--config", "one.toml"]);
    assert_eq!(code(&o), 1);
    sysarg(p, &["gen", "--seed", "4", "--events", "40", "--out", "small.jsonl"]);
    sysarg(p, &["window", "--in", "small.jsonl", "--len", "16", "--out", "small_ds.jsonl"]);
    let o = sysarg(p, &["score", "--checkpoint", "m.json", "--in", "small_ds.jsonl"]);
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("hash mismatch"));
}

#[test]
fn studies_write_reports() {
    let dir = workspace();
    let p = dir.path();
    let o = sysarg(p, &["study-mask", "--config", "exp.toml"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(p.join("out/mask.txt")).unwrap();
    assert!(text.contains("0.25*"));
    assert_eq!(String::from_utf8(o.stdout).unwrap(), text);
    let first = fs::read_to_string(p.join("out/mask.jsonl")).unwrap();
    let header: serde_json::Value = serde_json::from_str(first.lines().next().unwrap()).unwrap();
    assert_eq!(header["config"]["seeds"], serde_json::json!([1]));

    let o = sysarg(p, &["study-position", "--config", "exp.toml", "--kind", "lstm"]);
    assert_eq!(code(&o), 1);
    let o = sysarg(p, &["time-overhead", "--config", "exp.toml", "--epochs", "3"]);
    assert_eq!(code(&o), 1);
    let o = sysarg(p, &["ablate", "--config", "exp.toml", "--lr", "1e308"]);
    let stdout = String::from_utf8_lossy(&o.stdout);
    if stdout.contains("FAILED") {
        assert_eq!(code(&o), 2);
    }
}

#[test]
fn exit_codes_for_bad_invocations() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(code(&sysarg(p, &["--help"])), 0);
    assert_eq!(code(&sysarg(p, &["frobnicate"])), 1);
    assert_eq!(code(&sysarg(p, &["train", "--train", "missing.jsonl"])), 1);
    assert_eq!(code(&sysarg(p, &["train", "--seeds", ""])), 1);
    fs::write(p.join("bad.toml"), "[model]\nlayers = 3\n").unwrap();
    assert_eq!(code(&sysarg(p, &["ablate", "--config", "bad.toml"])), 1);
    fs::write(p.join("garbage.txt"), "garbage\n").unwrap();
    assert_eq!(code(&sysarg(p, &["ingest", "--in", "garbage.txt"])), 2);
}
