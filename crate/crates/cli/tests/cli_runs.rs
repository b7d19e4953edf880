use std::path::Path;
use std::process::Command;

fn detfree(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_detfree")).args(args).output().expect("binary runs")
}

fn small_sample(out: &Path, extra: &[&str]) -> std::process::Output {
    let out = out.to_str().unwrap();
    let mut args =
        vec!["sample", "-o", out, "--set", "chains.batch=3", "--set", "chains.steps=15", "--set", "chains.seed=4"];
    for e in extra {
        args.extend(["--set", e]);
    }
    detfree(&args)
}

#[test]
fn sample_is_reproducible_and_shaped() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(small_sample(&a, &[]).status.success());
    assert!(small_sample(&b, &[]).status.success());
    let ta = std::fs::read(a.join("traces.csv")).unwrap();
    assert_eq!(ta, std::fs::read(b.join("traces.csv")).unwrap());
    let text = String::from_utf8(ta).unwrap();
    assert_eq!(text.lines().count(), 1 + 3 * 16);
    assert!(a.join("timings.csv").exists());
    assert!(!a.join(".lock").exists());
}

#[test]
fn config_snapshot_reproduces_run() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(small_sample(&a, &["sampler.kind=\"rwm\"", "sampler.dt=0.3"]).status.success());
    let snap = a.join("config.toml");
    let out = detfree(&["sample", "-c", snap.to_str().unwrap(), "-o", b.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read(a.join("traces.csv")).unwrap(), std::fs::read(b.join("traces.csv")).unwrap());
}

#[test]
fn diagnose_reads_stored_run() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    assert!(small_sample(&a, &[]).status.success());
    let out = detfree(&["diagnose", a.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(a.join("diagnostics.json")).unwrap()).unwrap();
    assert!(v.is_object());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = small_sample(&dir.path().join("bad"), &["sampler.dt=-1"]);
    assert_eq!(bad.status.code(), Some(1));
    let unknown = small_sample(&dir.path().join("unknown"), &["sampler.nonsense=1"]);
    assert_eq!(unknown.status.code(), Some(1));
    let missing = detfree(&["sample", "-c", dir.path().join("nope.toml").to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(3));

    let locked = dir.path().join("locked");
    std::fs::create_dir_all(&locked).unwrap();
    std::fs::write(locked.join(".lock"), "1\n").unwrap();
    assert_eq!(small_sample(&locked, &[]).status.code(), Some(3));
}
