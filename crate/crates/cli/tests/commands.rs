use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &[&str] = &[
    "--set",
    "num_fields=5",
    "--set",
    "min_field_size=10",
    "--set",
    "max_field_size=3000",
    "--samples-per-segment",
    "800",
    "--k",
    "10",
];

fn fieldcomp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fieldcomp")).args(args).output().unwrap()
}

fn run_ok(args: &[&str]) -> String {
    let out = fieldcomp(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn with_small<'a>(args: &[&'a str]) -> Vec<&'a str> {
    args.iter().copied().chain(SMALL.iter().copied()).collect()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_writes_segments_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    run_ok(&with_small(&["gen", "--segments", "24", "--seed", "7", "--out", path(&a)]));
    run_ok(&with_small(&["gen", "--segments", "24", "--seed", "7", "--out", path(&b)]));
    let mut names: Vec<String> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names.len(), 25);
    assert!(names.contains(&"manifest.txt".to_string()));
    assert_eq!(names.iter().filter(|n| n.ends_with(".bin")).count(), 24);
    for name in &names {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn config_errors_exit_with_code_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = fieldcomp(&["gen", "--zipf-exponent", "0.5", "--out", path(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.starts_with("error[config]: "), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1);
    assert!(err.contains("zipf_exponent"));

    let cfg = tmp.path().join("bad.cfg");
    fs::write(&cfg, "k=3\nnot_a_key=1\n").unwrap();
    let out = fieldcomp(&["pipeline", "--config", path(&cfg)]);
    assert_eq!(out.status.code(), Some(2));

    let out = fieldcomp(&["pipeline", "--init", "median"]);
    assert_eq!(out.status.code(), Some(2));
    let out = fieldcomp(&["pipeline", "--bogus-flag"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().starts_with("error[config]: "));
}

#[test]
fn runtime_errors_exit_with_code_one() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = tmp.path().join("metrics.tsv");
    fs::write(&empty, "").unwrap();
    let out = fieldcomp(&["report", path(&empty)]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.starts_with("error[runtime]: no data"), "{err}");

    let out = fieldcomp(&["pipeline", "--data-dir", path(&tmp.path().join("missing")), "--out", path(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8(out.stderr).unwrap().starts_with("error[runtime]: "));
}

#[test]
fn pipeline_logs_two_rows_per_segment_and_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let fast = tmp.path().join("fast");
    let full = tmp.path().join("full");
    run_ok(&with_small(&["pipeline", "--segments", "24", "--seed", "3", "--fast", "--fast-multiplier", "20", "--out", path(&fast)]));
    run_ok(&with_small(&["--threads", "1", "pipeline", "--segments", "24", "--seed", "3", "--no-fast", "--out", path(&full)]));
    let metrics = fs::read_to_string(fast.join("metrics.tsv")).unwrap();
    assert_eq!(metrics.lines().count(), 1 + 48);
    assert_eq!(metrics.lines().filter(|l| l.split('\t').nth(1) == Some("retrain")).count(), 24);
    assert_eq!(fs::read_dir(fast.join("reports")).unwrap().count(), 48);
    assert!(fast.join("checkpoints").join("baseline.fcmb").exists());

    let single = run_ok(&["report", path(&fast)]);
    let header = single.lines().next().unwrap();
    for col in ["AUC (Before)", "AUC (After)", "Log loss (Before)", "Log loss (After)", "#Vectors (Before)", "#Vectors (After)"] {
        assert!(header.contains(col), "{col}");
    }
    assert_eq!(single.lines().count(), 25);

    let both = run_ok(&["report", path(&fast), path(&full)]);
    assert!(both.contains("clustering_ratio"));

    // baseline rows do not depend on compression
    let base = tmp.path().join("base");
    run_ok(&with_small(&["pipeline", "--segments", "24", "--seed", "3", "--no-compress", "--out", path(&base)]));
    let train_rows = |m: &str| m.lines().filter(|l| l.split('\t').nth(1) == Some("train")).map(String::from).collect::<Vec<_>>();
    assert_eq!(train_rows(&metrics), train_rows(&fs::read_to_string(base.join("metrics.tsv")).unwrap()));
    assert_eq!(fs::read_to_string(base.join("metrics.tsv")).unwrap().lines().count(), 25);
}

#[test]
fn step_commands_chain() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    run_ok(&with_small(&["gen", "--segments", "2", "--seed", "1", "--out", path(&data)]));
    let trained = tmp.path().join("trained.fcmb");
    let compressed = tmp.path().join("compressed.fcmb");
    let retrained = tmp.path().join("retrained.fcmb");
    let out = run_ok(&with_small(&["train", "--data-dir", path(&data), "--segment", "0", "--out", path(&trained)]));
    assert!(out.starts_with("train segment=0"));
    let out = run_ok(&with_small(&["train", "--data-dir", path(&data), "--segment", "1", "--checkpoint", path(&trained), "--out", path(&trained)]));
    assert!(out.starts_with("train segment=1"));
    let table = run_ok(&with_small(&["compress", "--checkpoint", path(&trained), "--out", path(&compressed)]));
    assert!(table.starts_with("field_id") || table.trim_start().starts_with("field_id"));
    run_ok(&with_small(&["retrain", "--data-dir", path(&data), "--segment", "1", "--checkpoint", path(&compressed), "--out", path(&retrained)]));
    let eval = run_ok(&with_small(&["eval", "--data-dir", path(&data), "--segment", "1", "--checkpoint", path(&retrained)]));
    assert!(eval.contains("auc="));

    // retraining needs a compressed checkpoint
    let out = fieldcomp(&with_small(&["retrain", "--data-dir", path(&data), "--segment", "1", "--checkpoint", path(&trained), "--out", path(&retrained)]));
    assert_eq!(out.status.code(), Some(1));
}
