//! End-to-end behavior of the `pgov` binary: exit codes, stage
//! restartability, and report emission.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn pgov(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pgov"))
        .args(args)
        .env("PGOV_THREADS", "2")
        .output()
        .expect("binary runs")
}

/// Small config so CLI tests stay fast.
fn tiny_config(dir: &Path) -> String {
    let path = dir.join("tiny.json");
    fs::write(
        &path,
        r#"{
  "scene": { "train_scenes": 2, "eval_scenes": 1, "surface_density": 60.0, "objects_per_scene": 4 },
  "camera": { "frames_per_scene": 6 },
  "train": { "epochs_stage1": 2, "epochs_stage2": 4 },
  "pseudo": { "repetitions": 2 }
}"#,
    )
    .unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn config_error_exits_2_and_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{ "train": { "learning_rate": -0.5 } }"#).unwrap();
    let out = pgov(&[
        "synth",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("run").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("train.learning_rate"), "stderr: {stderr}");
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{ "trian": {} }"#).unwrap();
    let out = pgov(&[
        "synth",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("run").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("trian"));
}

#[test]
fn unknown_preset_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = pgov(&[
        "experiment",
        "--out",
        dir.path().join("run").to_str().unwrap(),
        "--preset",
        "bogus",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn truncated_frame_file_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let run = dir.path().join("run");
    let run_s = run.to_str().unwrap();
    assert!(pgov(&["synth", "--config", &cfg, "--out", run_s]).status.success());
    assert!(pgov(&["render", "--config", &cfg, "--out", run_s]).status.success());
    assert!(pgov(&["oracle", "--config", &cfg, "--out", run_s]).status.success());

    let depth = run.join("frames/train_000/frame_000000.depth");
    let bytes = fs::read(&depth).unwrap();
    fs::write(&depth, &bytes[..bytes.len() - 5]).unwrap();

    let out = pgov(&["pretrain", "--config", &cfg, "--out", run_s]);
    assert_eq!(out.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("frame_000000.depth"), "stderr: {stderr}");
    assert!(stderr.contains("byte"), "stderr should carry the offset: {stderr}");
}

#[test]
fn report_without_eval_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = pgov(&["report", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn synth_is_restartable_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let run = dir.path().join("run");
    let run_s = run.to_str().unwrap();
    assert!(pgov(&["synth", "--config", &cfg, "--out", run_s, "--seed", "3"]).status.success());
    let scene = fs::read(run.join("scenes/train_000/scene.pgov")).unwrap();
    let traj = fs::read(run.join("scenes/train_000/trajectory.json")).unwrap();
    assert!(pgov(&["synth", "--config", &cfg, "--out", run_s, "--seed", "3"]).status.success());
    assert_eq!(scene, fs::read(run.join("scenes/train_000/scene.pgov")).unwrap());
    assert_eq!(traj, fs::read(run.join("scenes/train_000/trajectory.json")).unwrap());
}

#[test]
fn experiment_and_report_happy_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let run = dir.path().join("run");
    let run_s = run.to_str().unwrap();
    let out = pgov(&[
        "experiment", "--config", &cfg, "--out", run_s, "--preset", "full_curriculum", "--seed", "5",
    ]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    for artifact in [
        "config.json",
        "manifest.json",
        "checkpoints/stage1.ckpt",
        "checkpoints/stage2.ckpt",
        "losses_stage1.csv",
        "losses_stage2.csv",
        "pseudo/scene_000/pseudo_labels.bin",
        "pseudo/scene_000/scene_vocab.json",
        "eval_report.csv",
        "confusion.csv",
    ] {
        assert!(run.join(artifact).exists(), "missing {artifact}");
    }

    let out = pgov(&["report", "--out", run_s]);
    assert!(out.status.success());
    let summary = fs::read_to_string(run.join("summary.txt")).unwrap();
    assert!(summary.contains("mIoU"));
    assert!(summary.contains("per-class IoU"));

    // One polyline per loss column per stage, each with one point per step.
    let svg = fs::read_to_string(run.join("loss_curves.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 6);
    let stage1_rows = fs::read_to_string(run.join("losses_stage1.csv"))
        .unwrap()
        .lines()
        .count()
        - 1;
    let first_polyline = svg.split("<polyline").nth(1).unwrap();
    let points_attr = first_polyline.split("points=\"").nth(1).unwrap();
    let n_points = points_attr.split('"').next().unwrap().split(' ').count();
    assert_eq!(n_points, stage1_rows);
}

#[test]
fn stage1_only_preset_skips_stage2_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let run = dir.path().join("run");
    let out = pgov(&[
        "experiment", "--config", &cfg, "--out", run.to_str().unwrap(),
        "--preset", "stage1_only", "--seed", "5",
    ]);
    assert!(out.status.success());
    assert!(run.join("checkpoints/stage1.ckpt").exists());
    assert!(!run.join("checkpoints/stage2.ckpt").exists());
    assert!(run.join("eval_report.csv").exists());
}

#[test]
fn config_round_trip_via_run_dir_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let run = dir.path().join("run");
    let run_s = run.to_str().unwrap();
    assert!(pgov(&["synth", "--config", &cfg, "--out", run_s]).status.success());
    let written = fs::read_to_string(run.join("config.json")).unwrap();
    // Feed the resolved config back in; it must re-serialize identically.
    let cfg2 = dir.path().join("resolved.json");
    fs::write(&cfg2, &written).unwrap();
    let run2 = dir.path().join("run2");
    assert!(pgov(&["synth", "--config", cfg2.to_str().unwrap(), "--out", run2.to_str().unwrap()])
        .status
        .success());
    assert_eq!(written, fs::read_to_string(run2.join("config.json")).unwrap());
}
