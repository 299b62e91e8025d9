use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const SMALL: &[&str] = &[
    "--set",
    "corpus.num_examples=660",
    "--set",
    "corpus.num_classes=4",
    "--set",
    "loop.featurizer.hash_dim=4096",
    "--set",
    "loop.train_a.max_epochs=15",
    "--set",
    "loop.train_b.max_epochs=15",
    "--set",
    "loop.train_c.max_epochs=15",
];

fn demo_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/demo.json")
}

fn relabel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_relabel")).args(args).output().unwrap()
}

fn stage(name: &str, dir: &Path, extra: &[&str]) -> Output {
    let config = demo_config();
    let mut args = vec![name, "--config", config.to_str().unwrap(), "--run-dir", dir.to_str().unwrap()];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    relabel(&args)
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    fs::read(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(relabel(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(relabel(&["run", "--bogus-flag"]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, "{ not json").unwrap();
    let out = relabel(&["run", "--config", cfg.to_str().unwrap(), "--run-dir", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(relabel(&["--help"]).status.success());
}

#[test]
fn missing_input_artifact_exits_two_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    for s in ["generate", "noise", "split"] {
        ok(&stage(s, dir.path(), &[]));
    }
    let out = stage("flag", dir.path(), &[]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("model_a.bin"), "{err}");
}

#[test]
fn stage_by_stage_matches_run() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for s in ["generate", "noise", "split", "train-a", "flag", "oracle-relabel", "merge", "train-b", "train-c", "eval"] {
        ok(&stage(s, a.path(), &[]));
    }
    // Only the report is left for `run` to produce.
    assert!(!a.path().join("report.json").exists());
    ok(&stage("run", a.path(), &[]));
    ok(&stage("run", b.path(), &[]));
    for name in ["train.jsonl", "test.jsonl", "flags.jsonl", "queue.jsonl", "corrections.jsonl", "merged.jsonl", "model_a.bin", "model_b.bin", "model_c.bin", "report.json"] {
        assert_eq!(read(a.path(), name), read(b.path(), name), "{name}");
    }
    let report: Value = serde_json::from_slice(&read(b.path(), "report.json")).unwrap();
    let flagged = report["dataset"]["flags"]["total"].as_u64().unwrap();
    assert_eq!(fs::read_to_string(b.path().join("flags.jsonl")).unwrap().lines().count() as u64, flagged);
}

#[test]
fn run_resumes_and_repairs_damaged_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    ok(&stage("run", dir.path(), &[]));
    let report = read(dir.path(), "report.json");
    let model_b = read(dir.path(), "model_b.bin");
    let model_a = read(dir.path(), "model_a.bin");

    fs::write(dir.path().join("model_b.bin"), b"garbage").unwrap();
    fs::remove_file(dir.path().join("report.json")).unwrap();
    ok(&stage("run", dir.path(), &[]));
    assert_eq!(read(dir.path(), "model_b.bin"), model_b);
    assert_eq!(read(dir.path(), "model_a.bin"), model_a);
    assert_eq!(read(dir.path(), "report.json"), report);

    let manifest: Value = serde_json::from_slice(&read(dir.path(), "manifest.json")).unwrap();
    assert_eq!(manifest["stages"].as_array().unwrap().len(), 10);
    let timings: Value = serde_json::from_slice(&read(dir.path(), "timings.json")).unwrap();
    assert!(timings.get("train_a").is_some() && timings.get("train_b").is_some());
}

#[test]
fn changed_config_invalidates_the_run() {
    let dir = tempfile::tempdir().unwrap();
    ok(&stage("run", dir.path(), &[]));
    let before = read(dir.path(), "train.jsonl");
    ok(&stage("run", dir.path(), &["--set", "split_seed=77"]));
    assert_ne!(read(dir.path(), "train.jsonl"), before);
    let cfg: Value = serde_json::from_slice(&read(dir.path(), "config.json")).unwrap();
    assert_eq!(cfg["split_seed"], 77);
    assert_eq!(cfg["corpus"]["num_examples"], 660);
}

#[test]
fn human_mode_halts_until_corrections_exist() {
    let oracle = tempfile::tempdir().unwrap();
    ok(&stage("run", oracle.path(), &[]));

    let dir = tempfile::tempdir().unwrap();
    let human = ["--set", r#"annotator={"kind":"human"}"#];
    let out = stage("run", dir.path(), &human);
    ok(&out);
    assert!(String::from_utf8_lossy(&out.stderr).contains("queue.jsonl"));
    assert!(dir.path().join("queue.jsonl").exists());
    assert!(!dir.path().join("merged.jsonl").exists());
    assert!(!dir.path().join("report.json").exists());
    assert_eq!(read(dir.path(), "queue.jsonl"), read(oracle.path(), "queue.jsonl"));

    fs::copy(oracle.path().join("corrections.jsonl"), dir.path().join("corrections.jsonl")).unwrap();
    ok(&stage("run", dir.path(), &human));
    for name in ["merged.jsonl", "model_b.bin", "model_c.bin"] {
        assert_eq!(read(dir.path(), name), read(oracle.path(), name), "{name}");
    }
}

#[test]
fn report_table_echoes_json_values() {
    let dir = tempfile::tempdir().unwrap();
    ok(&stage("run", dir.path(), &[]));
    let text = fs::read_to_string(dir.path().join("report.json")).unwrap();
    let report: Value = serde_json::from_str(&text).unwrap();
    let out = relabel(&["report", dir.path().join("report.json").to_str().unwrap()]);
    ok(&out);
    let table = String::from_utf8(out.stdout).unwrap();
    for m in ["model_a", "model_b", "model_c"] {
        let acc = report["accuracy"][m]["corrected_test"].to_string();
        assert!(table.contains(&acc), "{acc} missing from\n{table}");
    }
    let by_dir = relabel(&["report", "--run-dir", dir.path().to_str().unwrap()]);
    assert_eq!(by_dir.stdout, table.as_bytes());
}

#[test]
fn imported_corpus_runs_end_to_end() {
    let src = tempfile::tempdir().unwrap();
    ok(&stage("generate", src.path(), &[]));
    let input = src.path().join("corpus.jsonl");
    let dir = tempfile::tempdir().unwrap();
    ok(&stage("run", dir.path(), &["--input", input.to_str().unwrap()]));
    assert_eq!(read(dir.path(), "corpus.jsonl"), read(src.path(), "corpus.jsonl"));
    assert!(dir.path().join("report.json").exists());
}
