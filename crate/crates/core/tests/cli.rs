use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dipgnn::finetune::RunRecord;
use dipgnn::pretrain::read_metrics;

fn tiny() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/tiny.toml")
}

fn dipgnn(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_dipgnn"));
    cmd.args(args);
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn missing_config_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dipgnn(
        &["pretrain", "--config", "/nonexistent/x.toml", "--out-dir", path(dir.path())],
        &[],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not found"));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(dipgnn(&["pretrain"], &[]).status.code(), Some(1));
    assert_eq!(dipgnn(&["no-such-command"], &[]).status.code(), Some(1));
    assert_eq!(dipgnn(&["--help"], &[]).status.code(), Some(0));
}

#[test]
fn bad_override_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny();
    let args = ["pretrain", "--config", path(&config), "--out-dir", path(dir.path())];
    let out = dipgnn(&args, &[("DIPGNN_PRETRAIN_STEPS", "many")]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn pretrain_then_finetune() {
    let dir = tempfile::tempdir().unwrap();
    let d = path(dir.path());
    let out = dipgnn(&["pretrain", "--config", path(&tiny()), "--out-dir", d], &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (_, rows) = read_metrics(&dir.path().join("metrics.csv")).unwrap();
    assert_eq!(rows.len(), 10);

    let ck = dir.path().join("checkpoint.bin");
    let out = dipgnn(
        &["finetune", "--config", path(&tiny()), "--out-dir", d, "--checkpoint", path(&ck)],
        &[],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let record = RunRecord::read(&dir.path().join("results.json")).unwrap();
    assert_eq!(record.seed, 7);
    assert_eq!(record.backbone.as_str(), "disc");
    assert!((0.0..=1.0).contains(&record.test));
}

#[test]
fn finetune_needs_an_existing_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let d = path(dir.path());
    let absent = dir.path().join("absent.bin");
    let out = dipgnn(
        &["finetune", "--config", path(&tiny()), "--out-dir", d, "--checkpoint", path(&absent)],
        &[],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("results.json").exists());

    let out = dipgnn(&["finetune", "--config", path(&tiny()), "--out-dir", d], &[]);
    assert_eq!(out.status.code(), Some(1), "neither --checkpoint nor --scratch");
}

#[test]
fn generator_only_checkpoint_finetunes_the_generator() {
    let dir = tempfile::tempdir().unwrap();
    let d = path(dir.path());
    let env = [("DIPGNN_PRETRAIN_LAMBDA", "0")];
    let out = dipgnn(&["pretrain", "--config", path(&tiny()), "--out-dir", d], &env);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let ck = dir.path().join("checkpoint.bin");
    let out = dipgnn(
        &["finetune", "--config", path(&tiny()), "--out-dir", d, "--checkpoint", path(&ck)],
        &env,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let record = RunRecord::read(&dir.path().join("results.json")).unwrap();
    assert_eq!(record.backbone.as_str(), "gen");
}

#[test]
fn scratch_finetune_and_link_task() {
    let dir = tempfile::tempdir().unwrap();
    let d = path(dir.path());
    let out = dipgnn(
        &["finetune", "--config", path(&tiny()), "--out-dir", d, "--scratch"],
        &[("DIPGNN_FINETUNE_TASK", "link")],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let record = RunRecord::read(&dir.path().join("results.json")).unwrap();
    assert_eq!(record.backbone.as_str(), "scratch");
    assert_eq!(record.metric, "mrr");
    assert!(record.test > 0.0 && record.test <= 1.0);
}

#[test]
fn gen_sbm_writes_a_loadable_graph() {
    let dir = tempfile::tempdir().unwrap();
    let out = dipgnn(&["gen-sbm", "--config", path(&tiny()), "--out-dir", path(dir.path())], &[]);
    assert!(out.status.success());
    let labels = std::fs::read_to_string(dir.path().join("labels.txt")).unwrap();
    assert_eq!(labels.lines().count(), 300);
    assert!(std::fs::metadata(dir.path().join("edges.tsv")).unwrap().len() > 0);
}

#[test]
fn grad_check_passes_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = dipgnn(&["grad-check", "--config", path(&tiny()), "--out-dir", path(dir.path())], &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("max relative error"));
}

#[test]
fn impossible_tolerance_is_a_numerical_failure() {
    let dir = tempfile::tempdir().unwrap();
    let out = dipgnn(
        &["grad-check", "--config", path(&tiny()), "--out-dir", path(dir.path()), "--tol", "0"],
        &[],
    );
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn unknown_variant_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = dipgnn(
        &["variant", "--config", path(&tiny()), "--out-dir", path(dir.path()), "--variant", "bogus"],
        &[],
    );
    assert_eq!(out.status.code(), Some(1));
}
