use std::path::Path;
use std::process::{Command, Output};

fn kawasaki(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kawasaki")).args(args).output().unwrap()
}

fn config(dir: &Path, body: &str) -> String {
    let p = dir.join("cfg.toml");
    std::fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

const SSEP: &str = r#"
experiment = "t"
seed = 1
[model]
family = "ssep"
L = 32
[simulation]
horizon = 20.0
replicas = 2
sample_every = 5.0
"#;

#[test]
fn gradient_model_passes_check() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), SSEP);
    let out = tmp.path().join("o");
    let r = kawasaki(&["check", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    assert!(out.join("check.json").exists());
    assert!(out.join("manifest.json").exists());
}

#[test]
fn non_gradient_model_fails_check_with_code_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "experiment = \"m\"\n[model]\nfamily = \"metropolis\"\nbeta = 0.7\n");
    let out = tmp.path().join("o");
    let r = kawasaki(&["check", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(1));
    let thermo = kawasaki(&["thermo", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(thermo.status.code(), Some(3));
}

#[test]
fn configuration_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(kawasaki(&["check", "--config", "/nonexistent.toml"]).status.code(), Some(2));
    let cfg = config(tmp.path(), "experiment = \"x\"\nbogus = 1\n");
    assert_eq!(kawasaki(&["check", "--config", &cfg]).status.code(), Some(2));
    let cfg = config(tmp.path(), "experiment = \"x\"\n[model]\nfamily = \"speed_change\"\nb = 0.7\n");
    let out = tmp.path().join("o");
    assert_eq!(kawasaki(&["check", "--config", &cfg, "--out", out.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(kawasaki(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn seed_override_changes_simulation_output() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), SSEP);
    let run = |seed: &str, name: &str| {
        let out = tmp.path().join(name);
        let r = kawasaki(&["simulate", "--config", &cfg, "--seed", seed, "--out", out.to_str().unwrap()]);
        assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
        std::fs::read(out.join("observables.csv")).unwrap()
    };
    let a = run("5", "a");
    assert_eq!(a, run("5", "b"));
    assert_ne!(a, run("6", "c"));
    let header = String::from_utf8(a).unwrap();
    assert!(header.starts_with("time,site,observable,value,stderr"));
}
