//! End-to-end CLI behavior: commands, file formats, exit codes.

use std::path::Path;
use std::process::{Command, Output};

use paratope::metrics::EvalReport;
use paratope::model::read_predictions;
use paratope::structure::read_dataset;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_paratope"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn paratope")
}

fn assert_code(out: &Output, want: i32) {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(
        out.status.code(),
        Some(want),
        "stdout:\n{stdout}\nstderr:\n{stderr}"
    );
}

#[test]
fn synth_writes_parseable_deterministic_datasets() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.ndjson");
    let b = dir.path().join("b.ndjson");
    let args = |p: &Path| {
        vec![
            "synth".to_string(),
            "--out".into(),
            p.display().to_string(),
            "--count".into(),
            "10".into(),
            "--seed".into(),
            "5".into(),
            "--cdr-len".into(),
            "8".into(),
            "--antigen-len".into(),
            "20".into(),
            "--contact-frac".into(),
            "0.4".into(),
        ]
    };
    let out = bin().args(args(&a)).output().unwrap();
    assert_code(&out, 0);
    let out = bin().args(args(&b)).output().unwrap();
    assert_code(&out, 0);
    let ta = std::fs::read_to_string(&a).unwrap();
    let tb = std::fs::read_to_string(&b).unwrap();
    assert_eq!(ta, tb, "same seed must give identical files");
    assert_eq!(ta.lines().count(), 10);
    // full parse validation
    let complexes = read_dataset(std::io::Cursor::new(ta.as_bytes())).unwrap();
    assert_eq!(complexes.len(), 10);
    for c in &complexes {
        c.validate().unwrap();
        assert_eq!(c.cdr_len(), 8);
        assert_eq!(c.antigen.len(), 20);
    }
}

#[test]
fn synth_unwritable_path_exits_2() {
    let out = run(&["synth", "--out", "/nonexistent-dir/x.ndjson", "--count", "1"]);
    assert_code(&out, 2);
}

#[test]
fn unknown_flag_is_rejected() {
    let out = run(&["synth", "--out", "/tmp/x", "--frobnicate", "1"]);
    assert_eq!(out.status.code(), Some(2));
}

fn small_config(dir: &Path) -> String {
    let cfg = dir.join("config.toml");
    std::fs::write(
        &cfg,
        "[encoder]\nn_layers = 1\n[train]\nmax_epochs = 2\nbatch_size = 4\nseed = 1\n",
    )
    .unwrap();
    cfg.display().to_string()
}

/// One shared tiny train→predict→eval pipeline exercised end to end.
#[test]
fn train_predict_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let train = dir.path().join("train.ndjson");
    let val = dir.path().join("val.ndjson");
    for (path, seed) in [(&train, "0"), (&val, "40")] {
        let out = run(&[
            "synth",
            "--out",
            &path.display().to_string(),
            "--count",
            "3",
            "--seed",
            seed,
            "--cdr-len",
            "6",
            "--antigen-len",
            "14",
        ]);
        assert_code(&out, 0);
    }
    let cfg = small_config(dir.path());
    let out_dir = dir.path().join("runs");
    let out = run(&[
        "train",
        "--train",
        &train.display().to_string(),
        "--val",
        &val.display().to_string(),
        "--config",
        &cfg,
        "--out-dir",
        &out_dir.display().to_string(),
    ]);
    assert_code(&out, 0);
    assert!(out_dir.join("best.ptck").exists());
    assert!(out_dir.join("config.resolved.toml").exists());
    let history = std::fs::read_to_string(out_dir.join("history.csv")).unwrap();
    assert!(history.starts_with("epoch,seq,coord,contact,fp,pair,dock,aux,total,val_total,lr"));
    assert_eq!(history.lines().count(), 3, "2 epochs + header");

    // predict on the validation set, twice: determinism
    let preds1 = dir.path().join("pred1.ndjson");
    let preds2 = dir.path().join("pred2.ndjson");
    for p in [&preds1, &preds2] {
        let out = run(&[
            "predict",
            "--model",
            &out_dir.join("best.ptck").display().to_string(),
            "--in",
            &val.display().to_string(),
            "--out",
            &p.display().to_string(),
            "--config",
            &cfg,
        ]);
        assert_code(&out, 0);
    }
    let t1 = std::fs::read_to_string(&preds1).unwrap();
    let t2 = std::fs::read_to_string(&preds2).unwrap();
    assert_eq!(t1, t2, "prediction must be deterministic");
    // schema: record count matches inputs, probabilities in (0,1)
    let records = read_predictions(std::io::Cursor::new(t1.as_bytes())).unwrap();
    assert_eq!(records.len(), 3);
    for r in &records {
        r.validate().unwrap();
        assert!(r.contact_probs.iter().all(|&p| p > 0.0 && p < 1.0));
    }

    // evaluate
    let report = dir.path().join("report.csv");
    let out = run(&[
        "eval",
        "--pred",
        &preds1.display().to_string(),
        "--ref",
        &val.display().to_string(),
        "--out",
        &report.display().to_string(),
    ]);
    assert_code(&out, 0);
    let csv = std::fs::read_to_string(&report).unwrap();
    assert!(csv.starts_with(EvalReport::CSV_HEADER));
    assert_eq!(csv.lines().count(), 1 + 3 + 2, "header + rows + mean/std");
}

#[test]
fn train_zero_epochs_still_writes_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.ndjson");
    let out = run(&[
        "synth",
        "--out",
        &data.display().to_string(),
        "--count",
        "2",
        "--cdr-len",
        "6",
        "--antigen-len",
        "12",
    ]);
    assert_code(&out, 0);
    let cfg = small_config(dir.path());
    let out_dir = dir.path().join("zero");
    let out = run(&[
        "train",
        "--train",
        &data.display().to_string(),
        "--val",
        &data.display().to_string(),
        "--config",
        &cfg,
        "--out-dir",
        &out_dir.display().to_string(),
        "--max-epochs",
        "0",
    ]);
    assert_code(&out, 0);
    assert!(out_dir.join("best.ptck").exists());
}

#[test]
fn train_missing_file_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "train",
        "--train",
        "/nonexistent.ndjson",
        "--val",
        "/nonexistent.ndjson",
        "--out-dir",
        &dir.path().join("x").display().to_string(),
    ]);
    assert_code(&out, 2);
}

#[test]
fn bad_config_key_exits_2_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[train]\nlearning_rate = 0.1\n").unwrap();
    let data = dir.path().join("d.ndjson");
    run(&["synth", "--out", &data.display().to_string(), "--count", "1"]);
    let out = run(&[
        "train",
        "--train",
        &data.display().to_string(),
        "--val",
        &data.display().to_string(),
        "--config",
        &cfg.display().to_string(),
        "--out-dir",
        &dir.path().join("r").display().to_string(),
    ]);
    assert_code(&out, 2);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("learning_rate"), "{stderr}");
}

#[test]
fn eval_mismatched_ids_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.ndjson");
    let b = dir.path().join("b.ndjson");
    run(&["synth", "--out", &a.display().to_string(), "--count", "2", "--seed", "0"]);
    run(&["synth", "--out", &b.display().to_string(), "--count", "2", "--seed", "99"]);
    // predictions against dataset a, evaluated against dataset b
    let cfg = small_config(dir.path());
    let out_dir = dir.path().join("m");
    run(&[
        "train",
        "--train",
        &a.display().to_string(),
        "--val",
        &a.display().to_string(),
        "--config",
        &cfg,
        "--out-dir",
        &out_dir.display().to_string(),
        "--max-epochs",
        "0",
    ]);
    let preds = dir.path().join("p.ndjson");
    let out = run(&[
        "predict",
        "--model",
        &out_dir.join("best.ptck").display().to_string(),
        "--in",
        &a.display().to_string(),
        "--out",
        &preds.display().to_string(),
        "--config",
        &cfg,
    ]);
    assert_code(&out, 0);
    let out = run(&[
        "eval",
        "--pred",
        &preds.display().to_string(),
        "--ref",
        &b.display().to_string(),
        "--out",
        &dir.path().join("r.csv").display().to_string(),
    ]);
    assert_code(&out, 2);
}

#[test]
fn check_fast_passes_and_prints_per_check_lines() {
    let start = std::time::Instant::now();
    let out = run(&["check", "--level", "fast"]);
    assert_code(&out, 0);
    let stdout = String::from_utf8_lossy(&out.stdout);
    for name in [
        "distance_bias",
        "analytic_values",
        "regimen",
        "gating_hard_off",
        "contact_label_oracle",
        "equivariance",
    ] {
        assert!(stdout.contains(name), "missing check line for {name}:\n{stdout}");
    }
    assert!(stdout.lines().filter(|l| l.starts_with("PASS")).count() >= 9);
    assert!(
        start.elapsed().as_secs() < 60,
        "fast check took {:?}",
        start.elapsed()
    );
}
