use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use oracle_core::model::Checkpoint;
use oracle_core::{load_dataset, ActivityClass};
use tempfile::TempDir;

fn oracle(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oracle"))
        .current_dir(dir)
        .env_remove("ORACLE_SEED")
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) {
    let out = oracle(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    oracle(dir, args).status.code().unwrap()
}

const TINY: [&str; 12] = [
    "--hidden", "16", "--latent", "16", "--layers", "1", "--heads", "2", "--batch-size", "8", "--mining-pool", "4",
];

/// A 40-day synthetic split plus a one-epoch tiny model in `dir`.
fn prepared(extra_train: &[&str]) -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["--seed", "3", "--out", "data", "prep", "--synthetic", "40"]);
    let mut args = vec!["--seed", "3", "--out", "run", "train", "--train", "data/train.oracle", "--epochs", "1"];
    args.extend_from_slice(&TINY);
    args.extend_from_slice(extra_train);
    ok(dir.path(), &args);
    dir
}

fn metrics_rows(path: &Path) -> Vec<Vec<f64>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect()
}

#[test]
fn prep_splits_eight_one_one() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["prep", "--synthetic", "512", "--seed", "7", "--out", "data"]);
    let sizes: Vec<usize> = ["train", "val", "test"]
        .iter()
        .map(|s| load_dataset(dir.path().join(format!("data/{s}.oracle"))).unwrap().len())
        .collect();
    assert_eq!(sizes, [410, 51, 51]);
    assert!(dir.path().join("data/audit.tsv").exists());
    assert!(dir.path().join("data/prep.config.toml").exists());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(code(p, &["prep", "--raw", "missing.txt"]), 2);
    assert_eq!(code(p, &["--config", "missing.toml", "prep", "--synthetic", "4"]), 2);
    assert_eq!(code(p, &["--threads", "0", "prep", "--synthetic", "4"]), 2);

    // Rules nothing satisfies leave an empty dataset.
    fs::write(p.join("strict.toml"), "[Sleep]\nexact_occ = 5\n").unwrap();
    assert_eq!(code(p, &["--rules", "strict.toml", "prep", "--synthetic", "20"]), 3);

    fs::write(p.join("not-a-dataset.oracle"), "hello\n").unwrap();
    assert_eq!(code(p, &["eval", "--generated", "not-a-dataset.oracle", "--against", "not-a-dataset.oracle"]), 2);
}

#[test]
fn no_contrastive_zeroes_the_column_and_resume_continues() {
    let dir = prepared(&["--no-contrastive"]);
    let p = dir.path();
    let first = metrics_rows(&p.join("run/metrics.log"));
    assert!(!first.is_empty());
    assert!(first.iter().all(|r| r[3] == 0.0));
    assert_eq!(first.iter().map(|r| r[0]).collect::<Vec<_>>(), (0..first.len()).map(|s| s as f64).collect::<Vec<_>>());

    ok(p, &["--out", "run", "train", "--train", "data/train.oracle", "--resume", "run/final.oracle-ckpt", "--epochs", "1"]);
    let rows = metrics_rows(&p.join("run/metrics.log"));
    assert_eq!(rows.len(), 2 * first.len());
    let steps: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    assert!(steps.windows(2).all(|w| w[1] == w[0] + 1.0), "{steps:?}");
    assert!(p.join("run/epoch-002.oracle-ckpt").exists());
}

#[test]
fn generate_fix_and_bad_spec() {
    let dir = prepared(&[]);
    let p = dir.path();
    let args = ["--seed", "1", "generate", "--checkpoint", "run/final.oracle-ckpt", "--count", "6", "--fix", "23:00-24:00=Sleep"];
    ok(p, &[&["--out", "g1"][..], &args].concat());
    let days = load_dataset(p.join("g1/generated.oracle")).unwrap();
    assert_eq!(days.len(), 6);
    for d in &days {
        assert!(d.tokens()[276..].iter().all(|&c| c == ActivityClass::Sleep));
    }
    ok(p, &[&["--out", "g2"][..], &args].concat());
    assert_eq!(fs::read(p.join("g1/generated.oracle")).unwrap(), fs::read(p.join("g2/generated.oracle")).unwrap());

    let bad = ["generate", "--checkpoint", "run/final.oracle-ckpt", "--fix", "25:00-26:00=Sleep"];
    assert_eq!(code(p, &bad), 2);
    let bad = ["generate", "--checkpoint", "run/final.oracle-ckpt", "--fix", "23:02-24:00=Sleep"];
    assert_eq!(code(p, &bad), 2);
}

#[test]
fn eval_and_knn_of_a_set_against_itself() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(p, &["--seed", "2", "--out", "data", "prep", "--synthetic", "30"]);
    ok(
        p,
        &["--out", "ev", "eval", "--generated", "data/test.oracle", "--against", "data/test.oracle", "--train", "data/train.oracle"],
    );
    let report = fs::read_to_string(p.join("ev/report.txt")).unwrap();
    assert!(report.contains("\nwd = 0\n"), "{report}");
    assert!(report.contains("\nsam = 0\n"), "{report}");

    ok(p, &["--out", "kn", "knn", "--generated", "data/train.oracle", "--train", "data/train.oracle"]);
    let train = load_dataset(p.join("data/train.oracle")).unwrap();
    let summary = fs::read_to_string(p.join("kn/knn.txt")).unwrap();
    assert!(summary.contains(&format!("exact_matches = {}", train.len())), "{summary}");
}

#[test]
fn diverging_training_exits_four_and_keeps_checkpoints() {
    let dir = prepared(&[]);
    let p = dir.path();
    let out = oracle(
        p,
        &[&["--out", "run", "train", "--train", "data/train.oracle", "--epochs", "1", "--lr", "1e30"][..], &TINY].concat(),
    );
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(Checkpoint::load(p.join("run/final.oracle-ckpt")).is_ok());
}
