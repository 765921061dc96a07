//! Shared helpers for driving the `triage` binary from integration tests.

// Compiled once per test target; not every target uses every helper.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::Command;

pub fn triage() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_triage"));
    // Isolate from the ambient environment: tests pass config explicitly.
    cmd.env_remove("TRIAGE_CONFIG");
    cmd
}

pub fn fixture_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/tracker-export.csv")
}

pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

pub fn run(cmd: &mut Command) -> Run {
    let output = cmd.output().expect("triage binary runs");
    Run {
        code: output.status.code().expect("no signal"),
        stdout: String::from_utf8_lossy(&output.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&output.stderr).into_owned(),
    }
}

/// Runs and asserts success, surfacing stderr on failure.
pub fn ok(cmd: &mut Command) -> Run {
    let result = run(cmd);
    assert_eq!(
        result.code, 0,
        "command failed\nstdout:\n{}\nstderr:\n{}",
        result.stdout, result.stderr
    );
    result
}

/// `--set key=value` pairs shared by every stage of a pipeline run, so all
/// commands resolve the same configuration.
pub fn with_sets<'a>(cmd: &'a mut Command, sets: &[String]) -> &'a mut Command {
    for entry in sets {
        cmd.args(["--set", entry]);
    }
    cmd
}

/// Settings for a fast but complete pipeline over the bundled 500-report
/// export: 32 hidden units and small text/optimizer budgets.
pub fn smoke_sets(corpus: &Path, out_dir: &Path) -> Vec<String> {
    vec![
        format!("corpus={}", corpus.display()),
        format!("out_dir={}", out_dir.display()),
        "seed=11".to_string(),
        "min_frequency=3".to_string(),
        "max_sequence_length=60".to_string(),
        "embed_dim=24".to_string(),
        "embed_epochs=2".to_string(),
        "hidden_units=32".to_string(),
        "lm_epochs=3".to_string(),
        "patience=2".to_string(),
        "batch_size=16".to_string(),
        "softmax_epochs=150".to_string(),
    ]
}

/// Ingests the bundled CSV export into `corpus` (canonical JSONL).
pub fn ingest_fixture(corpus: &Path, out_dir: &Path) {
    ok(triage().args([
        "ingest",
        fixture_path().to_str().unwrap(),
        "--output",
        corpus.to_str().unwrap(),
        "--map",
        "id=bug",
        "--map",
        "title=summary",
        "--map",
        "description=details",
        "--map",
        "owner=assignee",
        "--map",
        "status=state",
        "--map",
        "type=kind",
        "--map",
        "reported_time=opened",
        "--set",
        &format!("out_dir={}", out_dir.display()),
    ]));
}

/// Runs ingest → preprocess → train-embed → train-feature with
/// [`smoke_sets`], leaving artifacts under `out_dir`.
pub fn build_pipeline(corpus: &Path, out_dir: &Path) -> Vec<String> {
    ingest_fixture(corpus, out_dir);
    let sets = smoke_sets(corpus, out_dir);
    for stage in ["preprocess", "train-embed", "train-feature"] {
        ok(with_sets(triage().arg(stage), &sets));
    }
    sets
}
