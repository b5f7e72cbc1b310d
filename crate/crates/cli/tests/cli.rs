use std::fs;
use std::path::Path;
use std::process::Command;

const TINY: &str = "env = pendulum
env.horizon = 40
models = 2
timesteps_per_iteration = 160
batch_timesteps = 200
model_hidden = 16,16
model_max_passes = 20
model_patience = 10
policy_hidden = 8
validation_starts = 5
max_inner_updates = 10
eval_episodes = 3
outer_iterations = 2
";

fn metrpo(args: &[&str]) -> std::process::Output {
    let out = Command::new(env!("CARGO_BIN_EXE_metrpo"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs");
    out
}

fn ok(args: &[&str]) -> String {
    let out = metrpo(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn train_is_bitwise_reproducible_and_replayable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.cfg");
    fs::write(&cfg, TINY).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&["train", "--config", s(&cfg), "--seed", "3", "--models", "3", "--out", s(out)]);
    }
    let run_a = fs::read(a.join("run.csv")).unwrap();
    assert_eq!(run_a, fs::read(b.join("run.csv")).unwrap());
    assert_eq!(String::from_utf8_lossy(&run_a).lines().count(), 3);
    let log = fs::read_to_string(a.join("run.log")).unwrap();
    assert!(log.contains("models = 3") && log.contains("seed = 3") && log.contains("code_hash = "));

    let stdout = ok(&["replay", "--log", s(&a.join("run.log"))]);
    assert!(stdout.contains("replay matches"));

    let checkpoint = a.join("checkpoints/final");
    let e1 = dir.path().join("e1");
    let e2 = dir.path().join("e2");
    ok(&["eval", "--checkpoint", s(&checkpoint), "--episodes", "2", "--out", s(&e1)]);
    ok(&["eval", "--checkpoint", s(&checkpoint), "--episodes", "2", "--out", s(&e2)]);
    assert_eq!(fs::read(e1.join("run.csv")).unwrap(), fs::read(e2.join("run.csv")).unwrap());
}

#[test]
fn replay_detects_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.cfg");
    fs::write(&cfg, TINY.replace("outer_iterations = 2", "outer_iterations = 1")).unwrap();
    let a = dir.path().join("a");
    ok(&["train", "--config", s(&cfg), "--out", s(&a)]);
    let csv = fs::read_to_string(a.join("run.csv")).unwrap();
    fs::write(a.join("run.csv"), csv.replacen("160", "161", 1)).unwrap();
    assert!(!metrpo(&["replay", "--log", s(&a.join("run.log"))]).status.success());
}

#[test]
fn ablate_writes_cells_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.cfg");
    fs::write(&cfg, TINY.replace("outer_iterations = 2", "outer_iterations = 1")).unwrap();
    let out = dir.path().join("abl");
    let stdout = ok(&[
        "ablate", "--config", s(&cfg), "--axis", "k", "--values", "1,2", "--seeds", "0", "--out", s(&out),
    ]);
    assert!(stdout.contains("final_return"));
    assert!(out.join("k=1/seed_0/run.csv").exists());
    assert!(out.join("k=2/seed_0/run.csv").exists());
    assert_eq!(fs::read_to_string(out.join("summary.csv")).unwrap().lines().count(), 3);
    assert!(!metrpo(&["ablate", "--config", s(&cfg), "--axis", "colour", "--values", "1", "--out", s(&out)]).status.success());
}

#[test]
fn demo_bias_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&["demo-bias", "--dense", "--seed", "4", "--out", s(out)]);
    }
    assert_eq!(fs::read(a.join("run.csv")).unwrap(), fs::read(b.join("run.csv")).unwrap());
    assert!(a.join("curve_seed4.csv").exists());
}

#[test]
fn bad_flags_fail() {
    assert!(!metrpo(&["train", "--sampling-mode", "psychic", "--out", "/nonexistent/x"]).status.success());
    assert!(!metrpo(&["train", "--set", "models"]).status.success());
    assert!(!metrpo(&["frobnicate"]).status.success());
}
