use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn ttn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ttn")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// First 120 rows of the bundled digits set.
fn small_digits(dir: &Path) -> PathBuf {
    let full = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/digits.csv");
    let text = std::fs::read_to_string(full).unwrap();
    let rows: Vec<&str> = text.lines().take(120).collect();
    let path = dir.join("digits.csv");
    std::fs::write(&path, rows.join("\n") + "\n").unwrap();
    path
}

#[test]
fn tree_reports_digit_counts() {
    let o = ttn(&["tree"]);
    assert!(o.status.success());
    let s = stdout(&o);
    assert!(s.contains("parameters 10368"), "{s}");
}

#[test]
fn train_then_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_digits(dir.path());
    let out = dir.path().join("run");
    let o = ttn(&[
        "train", "--data", data.to_str().unwrap(), "--max-iter", "5", "--out", out.to_str().unwrap(), "--no-timing",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["metrics.ndjson", "loss.csv", "checkpoint.json"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let metrics = std::fs::read_to_string(out.join("metrics.ndjson")).unwrap();
    let lines: Vec<serde_json::Value> = metrics.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!(lines.len() >= 6);
    assert!(lines.last().unwrap().get("termination").is_some());

    let ck = out.join("checkpoint.json");
    let o = ttn(&["evaluate", "--data", data.to_str().unwrap(), "--checkpoint", ck.to_str().unwrap(), "--side", "all"]);
    assert!(o.status.success());
    let s = stdout(&o);
    assert!(s.starts_with("accuracy "), "{s}");
    assert!(s.contains("/120)"), "{s}");
}

#[test]
fn rtr_runs_with_each_retraction() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_digits(dir.path());
    for r in ["qr", "polar", "cayley"] {
        let out = dir.path().join(r);
        let o = ttn(&[
            "train", "--data", data.to_str().unwrap(), "--optimizer", "rtr", "--retraction", r, "--max-iter", "2",
            "--out", out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{r}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn reruns_are_byte_identical_without_timing() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_digits(dir.path());
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = ttn(&[
            "train", "--data", data.to_str().unwrap(), "--max-iter", "4", "--seed", "3", "--out",
            out.to_str().unwrap(), "--no-timing",
        ]);
        assert!(o.status.success());
        std::fs::read(out.join("metrics.ndjson")).unwrap()
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn rejects_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    let o = ttn(&["train", "--data", "/nonexistent.csv", "--out", out.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("error"));

    let data = small_digits(dir.path());
    let o = ttn(&["train", "--data", data.to_str().unwrap(), "--hessian", "cart-h", "--out", out.to_str().unwrap()]);
    assert!(!o.status.success());

    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "1,2,3\n").unwrap();
    let o = ttn(&["train", "--data", bad.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(!o.status.success());
}
