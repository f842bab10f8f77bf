use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn nbsim(args: &[&str], out_env: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_nbsim"));
    cmd.args(args).env_remove("NBSIM_OUT");
    if let Some(dir) = out_env {
        cmd.env("NBSIM_OUT", dir);
    }
    cmd.output().expect("binary runs")
}

fn small_run<'a>(extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec!["run", "--set", "drops=2", "--set", "ue_count=5"];
    v.extend_from_slice(extra);
    v
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().into_string().unwrap(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn preset_run_writes_the_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = nbsim(
        &small_run(&["--preset", "fig3a", "--seed", "42", "--out", out, "--trace"]),
        None,
    );
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let names: Vec<String> = read_dir_sorted(dir.path())
        .into_iter()
        .map(|f| f.0)
        .collect();
    assert_eq!(
        names,
        [
            "cells.csv",
            "drops.csv",
            "resolved_config.toml",
            "summary.csv",
            "trace.log",
            "ues.csv"
        ]
    );
    let ues = fs::read_to_string(dir.path().join("ues.csv")).unwrap();
    assert_eq!(ues.lines().count(), 1 + 2 * 5);
    assert!(!ues.contains("\r\n"));
    let trace = fs::read_to_string(dir.path().join("trace.log")).unwrap();
    let first = trace.lines().next().unwrap();
    assert!(first.starts_with("t=0 ue=0 SYNCHRONIZED cell="), "{first}");
    assert!(first.contains(" rsrp=") && first.contains(" pl="));
    let config = fs::read_to_string(dir.path().join("resolved_config.toml")).unwrap();
    assert!(config.contains("seed = 42"));
}

#[test]
fn same_seed_same_bytes() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        let o = nbsim(
            &small_run(&[
                "--preset",
                "decoupled-demo",
                "--seed",
                "9",
                "--trace",
                "--out",
                d.path().to_str().unwrap(),
            ]),
            None,
        );
        assert_eq!(o.status.code(), Some(0));
    }
    assert_eq!(read_dir_sorted(a.path()), read_dir_sorted(b.path()));
}

#[test]
fn seed_changes_results() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    nbsim(
        &small_run(&[
            "--preset",
            "fig3a",
            "--seed",
            "1",
            "--out",
            a.path().to_str().unwrap(),
        ]),
        None,
    );
    nbsim(
        &small_run(&[
            "--preset",
            "fig3a",
            "--seed",
            "2",
            "--out",
            b.path().to_str().unwrap(),
        ]),
        None,
    );
    assert_ne!(
        fs::read(a.path().join("ues.csv")).unwrap(),
        fs::read(b.path().join("ues.csv")).unwrap()
    );
}

#[test]
fn json_format() {
    let dir = tempfile::tempdir().unwrap();
    let o = nbsim(
        &small_run(&["--preset", "homogeneous", "--format", "json"]),
        Some(dir.path()),
    );
    assert_eq!(o.status.code(), Some(0));
    let summary = fs::read_to_string(dir.path().join("summary.json")).unwrap();
    assert!(summary.trim_start().starts_with('{') && summary.trim_end().ends_with('}'));
    assert!(dir.path().join("ues.json").exists());
}

#[test]
fn config_file_run() {
    let dir = tempfile::tempdir().unwrap();
    let config = concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/../../configs/arch3_redirect.toml"
    );
    let o = nbsim(
        &small_run(&["--config", config, "--out", dir.path().to_str().unwrap()]),
        None,
    );
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert!(summary.contains("arch3-redirect,arch3,7,redirect_rate,"));
}

#[test]
fn missing_config_exits_1_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = nbsim(
        &[
            "run",
            "--config",
            "/nonexistent.toml",
            "--out",
            out.to_str().unwrap(),
        ],
        None,
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(!out.exists());
}

#[test]
fn invalid_config_lists_every_problem() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "ue_count = 3\nturbo = 1\n[flags]\nwarp = true\n").unwrap();
    let o = nbsim(
        &[
            "run",
            "--config",
            path.to_str().unwrap(),
            "--out",
            dir.path().to_str().unwrap(),
        ],
        None,
    );
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    for path in ["seed", "turbo", "flags.warp", "cell"] {
        assert!(err.contains(path), "{path} not in {err}");
    }
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
}

#[test]
fn usage_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(nbsim(&["run", "--out", out], None).status.code(), Some(1));
    assert_eq!(
        nbsim(
            &["run", "--preset", "fig3a", "--config", "x.toml", "--out", out],
            None
        )
        .status
        .code(),
        Some(1)
    );
    assert_eq!(
        nbsim(&["run", "--preset", "nope", "--out", out], None)
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        nbsim(&["run", "--preset", "fig3a"], None).status.code(),
        Some(1)
    );
}

#[test]
fn unwritable_out_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, b"x").unwrap();
    let out = blocker.join("sub");
    let o = nbsim(
        &small_run(&["--preset", "fig3a", "--out", out.to_str().unwrap()]),
        None,
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn out_flag_beats_env() {
    let (flag, env) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let o = nbsim(
        &small_run(&["--preset", "fig3a", "--out", flag.path().to_str().unwrap()]),
        Some(env.path()),
    );
    assert_eq!(o.status.code(), Some(0));
    assert!(flag.path().join("summary.csv").exists());
    assert_eq!(fs::read_dir(env.path()).unwrap().count(), 0);
}
