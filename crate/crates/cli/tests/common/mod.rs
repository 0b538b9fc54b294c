#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

pub fn ltood(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ltood"))
        .args(args)
        .current_dir(cwd)
        .env_remove("LTOOD_SEED")
        .output()
        .expect("spawn ltood")
}

/// Runs `ltood` and panics with its stderr unless it exits 0.
pub fn ok(cwd: &Path, args: &[&str]) -> String {
    let out = ltood(cwd, args);
    assert!(
        out.status.success(),
        "ltood {args:?} exited {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// A tiny benchmark so end-to-end commands stay fast.
pub fn small_data(cwd: &Path, dir: &str, seed: &str) {
    ok(
        cwd,
        &[
            "synth", "--out", dir, "--C", "6", "--n-max", "60", "--rho", "10", "--test-per-class", "20",
            "--aux-per-kind", "120", "--ood-test-size", "90", "--seed", seed,
        ],
    );
}

pub fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}
