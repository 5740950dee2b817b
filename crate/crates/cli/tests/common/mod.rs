//! Runs the CLI in-process against a generated fixture corpus.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use hedge_cli::commands::run;
use hedge_cli::fixture::{write_fixture, Fixture};

pub struct Output {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

pub fn hedge_with_stdin(args: &[&str], stdin: &str) -> Output {
    let mut input = stdin.as_bytes();
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run(
        std::iter::once("hedge").chain(args.iter().copied()),
        &mut input,
        &mut out,
        &mut err,
    );
    Output {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

pub fn hedge(args: &[&str]) -> Output {
    hedge_with_stdin(args, "")
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small, fast training settings for smoke runs.
pub const QUICK: [&str; 10] = [
    "--set",
    "epochs=4",
    "--set",
    "eval_every=2",
    "--set",
    "hidden=4",
    "--set",
    "batch_size=16",
    "--set",
    "cnn_filters=4",
];

pub struct Prepared {
    pub fixture: Fixture,
    pub corpus: PathBuf,
}

/// Writes the fixture under `root` and prepares it with the POS sidecar.
pub fn prepared(root: &Path, extra: &[&str]) -> Prepared {
    let fixture = write_fixture(&root.join("raw"), 1).unwrap();
    let corpus = root.join("prepared");
    let mut args = vec![
        "prepare",
        "--train-xml",
        s(&fixture.train_xml),
        "--eval-xml",
        s(&fixture.eval_xml),
        "--pos-sidecar",
        s(&fixture.pos_dir),
        "--out",
        s(&corpus),
    ];
    args.extend_from_slice(extra);
    let out = hedge(&args);
    assert_eq!(out.code, 0, "{}", out.stderr);
    Prepared { fixture, corpus }
}

/// Trains `preset` with [`QUICK`] settings into `out`.
pub fn quick_train(p: &Prepared, preset: &str, out: &Path, seed: u64) -> Output {
    let seed = seed.to_string();
    let mut args = vec![
        "train",
        "--corpus",
        s(&p.corpus),
        "--preset",
        preset,
        "--embeddings",
        s(&p.fixture.vectors),
        "--out",
        s(out),
        "--seed",
        &seed,
    ];
    args.extend_from_slice(&QUICK);
    hedge(&args)
}
