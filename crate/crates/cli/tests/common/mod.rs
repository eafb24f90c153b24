#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn toy_meshes() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/toy")
}

pub fn shapesel(args: &[&str]) -> Output {
    shapesel_with_env(args, &[])
}

pub fn shapesel_with_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_shapesel"));
    cmd.args(args);
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("spawn shapesel")
}

/// Runs and panics with the captured stderr on a non-zero exit.
pub fn ok(args: &[&str]) -> Output {
    let out = shapesel(args);
    assert!(
        out.status.success(),
        "shapesel {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// Builds a database from the bundled meshes into `dir/name`.
pub fn toy_db(dir: &Path, name: &str, k: usize) -> PathBuf {
    let out = dir.join(name);
    let k = k.to_string();
    ok(&["build-db", "--meshes", s(&toy_meshes()), "--out", s(&out), "--k", &k, "--seed", "1"]);
    out
}
