//! The `lmtx` binary end to end on a small synthetic run.

use std::path::Path;
use std::process::{Command, Output};

fn lmtx(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lmtx"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn error_record(o: &Output) -> serde_json::Value {
    let err = String::from_utf8_lossy(&o.stderr);
    let line = err.lines().last().expect("an error line");
    serde_json::from_str(line).unwrap()
}

const CONFIG: &str = "\
# small and fast
train_docs = data/train.txt
train_truth = data/train_truth.txt
labels = data/labels.txt
test_docs = data/test.txt
test_truth = data/test_truth.txt
synth_dir = data
feature_dim = 4096
embed_dim = 32
dev_size = 100
index = exact
max_cycles = 1
";

#[test]
fn synth_train_infer_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("run.cfg"), CONFIG).unwrap();

    let o = lmtx(dir, &["synth", "-c", "run.cfg"]);
    assert!(o.status.success(), "{o:?}");
    let s: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(s["labels"], 200);

    let o = lmtx(dir, &["train", "-c", "run.cfg", "--set", "run_id=t"]);
    assert!(o.status.success(), "{o:?}");
    let s: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(s["reports"].as_array().unwrap().len(), 2);
    for f in [
        "config.txt",
        "cycles.log",
        "ckpt-0",
        "ckpt-1",
        "best",
        "judgments.jsonl",
    ] {
        assert!(dir.join("runs/t").join(f).exists(), "{f}");
    }
    let log = std::fs::read_to_string(dir.join("runs/t/cycles.log")).unwrap();
    let last: serde_json::Value = serde_json::from_str(log.lines().last().unwrap()).unwrap();
    assert!(last["quality"].as_f64().is_some());

    let o = lmtx(dir, &["infer", "-c", "run.cfg", "--set", "run_id=t"]);
    assert!(o.status.success(), "{o:?}");
    let preds = std::fs::read_to_string(dir.join("runs/t/predictions.tsv")).unwrap();
    assert_eq!(preds.lines().count(), 500);
    assert_eq!(preds.lines().next().unwrap().split(',').count(), 10);

    let o = lmtx(
        dir,
        &[
            "eval",
            "-c",
            "run.cfg",
            "--set",
            "run_id=t",
            "--set",
            "report_format=csv",
        ],
    );
    assert!(o.status.success(), "{o:?}");
    let csv = stdout(&o);
    assert!(csv.lines().next().unwrap().contains("P@1"));
    assert_eq!(csv.lines().count(), 2);

    let o = lmtx(dir, &["cache-stats", "-c", "run.cfg", "--set", "run_id=t"]);
    assert!(o.status.success(), "{o:?}");
    let s: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert!(s["records"].as_u64().unwrap() > 0);
    assert_eq!(s["records"], s["distinct_keys"]);

    // second infer reuses the saved index
    let o = lmtx(dir, &["infer", "-c", "run.cfg", "--set", "run_id=t"]);
    let s: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(s["index_reused"], true);
}

#[test]
fn print_config_applies_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("run.cfg"), CONFIG).unwrap();
    let o = lmtx(
        tmp.path(),
        &["train", "-c", "run.cfg", "--set", "embed_dim=48", "--print-config"],
    );
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.lines().any(|l| l == "embed_dim = 48"));
    assert!(text.lines().any(|l| l == "feature_dim = 4096"));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();

    let o = lmtx(dir, &["train", "--set", "no_such_key=1"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(error_record(&o)["error"], "UnknownKey");

    let o = lmtx(
        dir,
        &[
            "train",
            "--set",
            "train_docs=missing.txt",
            "--set",
            "labels=missing.txt",
        ],
    );
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_record(&o)["error"], "MissingFile");

    let o = lmtx(dir, &["infer"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(error_record(&o)["error"], "MissingRequired");

    let o = lmtx(dir, &["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn unreachable_remote_teacher_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("run.cfg"), CONFIG).unwrap();
    assert!(lmtx(dir, &["synth", "-c", "run.cfg"]).status.success());
    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let endpoint = format!("endpoint=http://127.0.0.1:{port}/v1/chat/completions");
    let o = lmtx(
        dir,
        &[
            "train",
            "-c",
            "run.cfg",
            "--set",
            "teacher=remote",
            "--set",
            &endpoint,
            "--set",
            "model=m",
            "--set",
            "max_retries=0",
        ],
    );
    assert_eq!(o.status.code(), Some(3), "{o:?}");
    assert_eq!(error_record(&o)["error"], "RemoteUnavailable");
}
