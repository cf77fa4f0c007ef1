use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn fairltr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fairltr"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = fairltr(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Small synthetic dataset shared by the tests.
fn dataset(dir: &Path) -> String {
    ok(&[
        "gen",
        "--queries",
        "12",
        "--items",
        "6",
        "--features",
        "4",
        "--seed",
        "5",
        "--out-dir",
        p(dir),
    ]);
    p(&dir.join("dataset.txt")).to_string()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn sweep_writes_one_row_per_grid_point() {
    let tmp = TempDir::new().unwrap();
    let data = dataset(tmp.path());
    let out = tmp.path().join("sweep");
    ok(&[
        "sweep",
        "--data",
        &data,
        "--mode",
        "unweighted",
        "--deltas",
        "0:0.4:0.05",
        "--epochs",
        "1",
        "--lr",
        "1e-3",
        "--out-dir",
        p(&out),
    ]);
    let rows = csv_rows(&out.join("tradeoff.csv"));
    assert_eq!(rows.len(), 9);
    assert_eq!(rows[8][2], "0.4");
    assert!(rows.iter().all(|r| r[3] == "ok" && r[10] == "1"));
    let tidy = csv_rows(&out.join("results.csv"));
    assert_eq!(tidy.len(), 9 * 6);
    assert!(tidy
        .iter()
        .any(|r| r[1] == "unweighted" && r[2] == "0.4" && r[3] == "confidence" && r[4] == "1"));
}

#[test]
fn mode_none_matches_a_huge_delta() {
    let tmp = TempDir::new().unwrap();
    let data = dataset(tmp.path());
    let run = |name: &str, mode: &str, delta: &str| {
        let out = tmp.path().join(name);
        ok(&[
            "train",
            "--data",
            &data,
            "--mode",
            mode,
            "--delta",
            delta,
            "--epochs",
            "2",
            "--lr",
            "1e-3",
            "--batch",
            "4",
            "--seed",
            "7",
            "--out-dir",
            p(&out),
        ]);
        ok(&[
            "eval",
            "--data",
            &data,
            "--model",
            p(&out.join("model.ckpt")),
            "--mode",
            mode,
            "--delta",
            delta,
            "--policies",
            "--out-dir",
            p(&out),
        ]);
        csv_rows(&out.join("policies.csv"))
    };
    let relaxed = run("none", "none", "0.4");
    let big = run("big", "unweighted", "1e9");
    assert_eq!(relaxed.len(), big.len());
    for (a, b) in relaxed.iter().zip(&big) {
        assert_eq!(a[..3], b[..3]);
        let (x, y): (f64, f64) = (a[3].parse().unwrap(), b[3].parse().unwrap());
        assert!((x - y).abs() < 1e-9);
    }
}

#[test]
fn eval_confirms_the_trained_tolerance() {
    let tmp = TempDir::new().unwrap();
    let data = dataset(tmp.path());
    let out = tmp.path().join("run");
    ok(&[
        "train",
        "--data",
        &data,
        "--delta",
        "0.1",
        "--epochs",
        "1",
        "--lr",
        "1e-3",
        "--out-dir",
        p(&out),
    ]);
    ok(&[
        "eval",
        "--data",
        &data,
        "--model",
        p(&out.join("model.ckpt")),
        "--delta",
        "0.1",
        "--out-dir",
        p(&out),
    ]);
    let summary = csv_rows(&out.join("eval_summary.csv"));
    assert_eq!(summary[0][6], "1");
    let queries = csv_rows(&out.join("eval_queries.csv"));
    assert_eq!(queries.len(), 12);
    for row in &queries {
        for nu in &row[5..7] {
            assert!(nu.parse::<f64>().unwrap().abs() <= 0.1 + 1e-6);
        }
    }
}

#[test]
fn outputs_do_not_depend_on_worker_count() {
    let tmp = TempDir::new().unwrap();
    let data = dataset(tmp.path());
    let run = |workers: &str| {
        let out = tmp.path().join(format!("w{workers}"));
        ok(&[
            "simulate",
            "--data",
            &data,
            "--sweeps",
            "20",
            "--workers",
            workers,
            "--out-dir",
            p(&out),
        ]);
        let clicks = out.join("clicks.txt");
        ok(&[
            "train",
            "--data",
            &data,
            "--clicks",
            p(&clicks),
            "--epochs",
            "2",
            "--lr",
            "1e-3",
            "--batch",
            "4",
            "--workers",
            workers,
            "--out-dir",
            p(&out),
        ]);
        (
            fs::read(&clicks).unwrap(),
            fs::read(out.join("model.ckpt")).unwrap(),
            fs::read(out.join("metrics.csv")).unwrap(),
        )
    };
    assert_eq!(run("1"), run("4"));
}

#[test]
fn manifest_reproduces_a_run() {
    let tmp = TempDir::new().unwrap();
    let data = dataset(tmp.path());
    let first = tmp.path().join("first");
    ok(&[
        "train",
        "--data",
        &data,
        "--mode",
        "merit",
        "--delta",
        "0.2",
        "--epochs",
        "2",
        "--lr",
        "1e-3",
        "--seed",
        "3",
        "--out-dir",
        p(&first),
    ]);
    let second = tmp.path().join("second");
    ok(&[
        "train",
        "--config",
        p(&first.join("manifest-train.txt")),
        "--out-dir",
        p(&second),
    ]);
    assert_eq!(
        fs::read(first.join("model.ckpt")).unwrap(),
        fs::read(second.join("model.ckpt")).unwrap()
    );
}

#[test]
fn flags_override_the_config_file() {
    let tmp = TempDir::new().unwrap();
    let data = dataset(tmp.path());
    let cfg = tmp.path().join("run.conf");
    fs::write(&cfg, format!("data={data}\nepochs=3\nlr=0.001\nbatch=4\n")).unwrap();
    let out = tmp.path().join("run");
    ok(&["train", "--config", p(&cfg), "--epochs", "1", "--out-dir", p(&out)]);
    assert_eq!(csv_rows(&out.join("metrics.csv")).len(), 2);
    let manifest = fs::read_to_string(out.join("manifest-train.txt")).unwrap();
    assert!(manifest.contains("epochs=1\n") && manifest.contains("batch=4\n"));
}

#[test]
fn infeasible_delta_suggests_a_minimum() {
    let tmp = TempDir::new().unwrap();
    let data = dataset(tmp.path());
    let out = fairltr(&[
        "train",
        "--data",
        &data,
        "--mode",
        "merit",
        "--delta",
        "0",
        "--out-dir",
        p(tmp.path()),
    ]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("minimal feasible delta"), "{err}");
}

#[test]
fn errors_exit_non_zero() {
    let tmp = TempDir::new().unwrap();
    assert!(!fairltr(&["train", "--data", p(&tmp.path().join("missing.txt"))])
        .status
        .success());
    assert!(!fairltr(&["train", "--frobnicate"]).status.success());
    assert!(!fairltr(&["launch"]).status.success());
    let out = fairltr(&["train"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("--data"));
}

#[test]
fn ingest_assigns_quantile_groups() {
    let tmp = TempDir::new().unwrap();
    let raw = tmp.path().join("raw.txt");
    fs::write(
        &raw,
        "2 qid:1 1:0.1 2:5\n0 qid:1 1:0.9 2:3\n1 qid:1 1:0.5 2:1\n1 qid:2 1:0.3 2:2\n0 qid:2 1:0.7 2:4\n",
    )
    .unwrap();
    let out = tmp.path().join("ingested");
    ok(&[
        "ingest",
        "--data",
        p(&raw),
        "--group-feature",
        "2",
        "--groups",
        "2",
        "--out-dir",
        p(&out),
    ]);
    let text = fs::read_to_string(out.join("dataset.txt")).unwrap();
    assert!(text.starts_with("#groups 2\n#num_groups 2\n"));
    let groups: Vec<&str> = text.lines().filter_map(|l| l.split("group=").nth(1)).collect();
    assert_eq!(groups, vec!["1", "1", "0", "0", "1"]);
    let bad = fairltr(&[
        "ingest",
        "--data",
        p(&raw),
        "--group-feature",
        "9",
        "--out-dir",
        p(&out),
    ]);
    assert!(!bad.status.success());
}
