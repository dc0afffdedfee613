use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use miprun_core::trace::read_trace;

fn miprun(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_miprun"))
        .current_dir(dir)
        .env_remove("MIPRUN_WORKERS")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = miprun(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Report bytes up to the runtime section, which holds timings and the pool size.
fn stable_part(path: &Path) -> String {
    let text = std::fs::read_to_string(path).unwrap();
    let cut = text.find("\"runtime\"").expect("report has a runtime section");
    text[..cut].to_string()
}

fn planted(dir: &Path) -> PathBuf {
    ok(
        dir,
        &["simulate", "--blocks", "12", "--dim", "16", "--samples", "4096", "--plant", "5-8:0.01", "--seed", "7", "--out", "p.mipt"],
    );
    dir.join("p.mipt")
}

#[test]
fn simulate_writes_a_valid_trace_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let p = planted(dir.path());
    let t = read_trace(std::fs::File::open(&p).unwrap()).unwrap();
    assert_eq!((t.num_blocks(), t.num_samples(), t.hidden_dim()), (12, 4096, 16));
    assert!(dir.path().join("p.mipt.meta.json").exists());

    let first = std::fs::read(&p).unwrap();
    planted(dir.path());
    assert_eq!(first, std::fs::read(&p).unwrap());
}

#[test]
fn simulate_without_blocks_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = miprun(dir.path(), &["simulate", "--dim", "8"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("--blocks"));
}

#[test]
fn score_puts_planted_block_first() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["simulate", "--blocks", "8", "--samples", "2048", "--plant", "3:0.01", "--seed", "2", "--out", "s.mipt"]);
    let text = ok(dir.path(), &["score", "s.mipt"]);
    let first = text.lines().nth(1).unwrap();
    let cols: Vec<&str> = first.split_whitespace().collect();
    assert_eq!(cols[..2], ["1", "3"], "{text}");
    assert!(dir.path().join("s.mipt.score.json").exists());
}

#[test]
fn score_path_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&miprun(dir.path(), &["score", ""])), 2);
    assert_eq!(code(&miprun(dir.path(), &["score", "missing.mipt"])), 1);
}

#[test]
fn select_recovers_planted_run() {
    let dir = tempfile::tempdir().unwrap();
    planted(dir.path());
    let text = ok(dir.path(), &["select", "p.mipt", "--prune-n", "4"]);
    let line = text.lines().find(|l| l.starts_with("fast:")).unwrap();
    assert!(line.contains("P = 5,6,7,8"), "{line}");
    assert!(line.contains("converged = true"), "{line}");
}

#[test]
fn select_rejects_n_at_or_above_t() {
    let dir = tempfile::tempdir().unwrap();
    planted(dir.path());
    let out = miprun(dir.path(), &["select", "p.mipt", "--prune-n", "12"]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn iteration_bound_gives_exit_3_with_best_so_far() {
    let dir = tempfile::tempdir().unwrap();
    // Greedy starts at {2,6,8}; the run 6..8 needs one move and a confirming pass.
    ok(dir.path(), &["simulate", "--blocks", "12", "--plant", "2:0.02", "--plant", "6-8:0.03", "--seed", "3", "--out", "q.mipt"]);
    let full = ok(dir.path(), &["select", "q.mipt", "--prune-n", "3"]);
    assert!(full.contains("fast: P = 6,7,8"), "{full}");
    assert!(full.contains("iterations = 2"), "{full}");

    let out = miprun(dir.path(), &["select", "q.mipt", "--prune-n", "3", "--max-iterations", "1"]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("best P = 6,7,8"), "{}", stderr(&out));
}

#[test]
fn oracle_counts_subsets_and_guards() {
    let dir = tempfile::tempdir().unwrap();
    planted(dir.path());
    let text = ok(dir.path(), &["oracle", "p.mipt", "--prune-n", "4"]);
    assert!(text.contains("subsets evaluated: 495"), "{text}");

    ok(dir.path(), &["simulate", "--blocks", "64", "--dim", "4", "--samples", "64", "--out", "big.mipt"]);
    let out = miprun(dir.path(), &["oracle", "big.mipt", "--prune-n", "10"]);
    assert_eq!(code(&out), 4);
    // C(64, 10)
    assert!(stderr(&out).contains("151473214816"), "{}", stderr(&out));
}

#[test]
fn compare_self_and_sandwich() {
    let dir = tempfile::tempdir().unwrap();
    planted(dir.path());
    ok(dir.path(), &["select", "p.mipt", "--prune-n", "4"]);
    ok(dir.path(), &["oracle", "p.mipt", "--prune-n", "4"]);

    ok(dir.path(), &["compare", "p.mipt.select.json", "p.mipt.select.json", "--out", "self.json"]);
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("self.json")).unwrap()).unwrap();
    let pairs = v["details"]["pairs"].as_array().unwrap();
    let same: Vec<_> = pairs
        .iter()
        .filter(|p| p["left"].as_str().unwrap()[2..] == p["right"].as_str().unwrap()[2..])
        .collect();
    assert_eq!(same.len(), 2);
    for p in same {
        assert_eq!(p["objective_delta"].as_f64().unwrap(), 0.0);
        assert_eq!(p["jaccard"].as_f64().unwrap(), 1.0);
    }

    let text = ok(dir.path(), &["compare", "p.mipt.select.json", "p.mipt.oracle.json"]);
    assert!(text.contains("sandwich greedy <= fast <= oracle: holds"), "{text}");
}

#[test]
fn compare_joins_on_fingerprint() {
    let dir = tempfile::tempdir().unwrap();
    for (seed, name) in [("1", "a.mipt"), ("2", "b.mipt")] {
        ok(dir.path(), &["simulate", "--blocks", "6", "--samples", "1024", "--seed", "5", "--sample-seed", seed, "--out", name]);
        ok(dir.path(), &["score", name]);
    }
    let out = miprun(dir.path(), &["compare", "a.mipt.score.json", "b.mipt.score.json"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("fingerprint"));

    let text = ok(dir.path(), &["compare", "a.mipt.score.json", "b.mipt.score.json", "--cross-trace"]);
    assert!(text.contains("per-block rank correlation #0 vs #1:"), "{text}");
}

#[test]
fn compare_two_estimators() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["simulate", "--blocks", "6", "--samples", "1024", "--plant", "2:0.01", "--out", "e.mipt"]);
    ok(dir.path(), &["score", "e.mipt", "--estimator", "ksg", "--out", "ksg.json"]);
    ok(dir.path(), &["score", "e.mipt", "--estimator", "gaussian", "--proj-dim", "2", "--out", "gauss.json"]);
    let text = ok(dir.path(), &["compare", "ksg.json", "gauss.json"]);
    assert!(text.contains("per-block rank correlation #0 vs #1:"), "{text}");
}

#[test]
fn trace_info_reports_header_and_identity_blocks() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["simulate", "--blocks", "5", "--dim", "6", "--samples", "100", "--plant", "3:0", "--out", "i.mipt"]);
    let text = ok(dir.path(), &["trace-info", "i.mipt"]);
    assert!(text.contains("T=5  S=100  D=6"), "{text}");
    assert!(text.contains("non-finite scan: clean"));
    let same: Vec<bool> = text
        .lines()
        .skip(2)
        .take(6)
        .map(|l| l.trim_end().ends_with("true"))
        .collect();
    assert_eq!(same, [false, false, false, true, false, false]);
}

#[test]
fn trace_info_diagnoses_truncation() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["simulate", "--blocks", "3", "--dim", "4", "--samples", "10", "--out", "t.mipt"]);
    let p = dir.path().join("t.mipt");
    let bytes = std::fs::read(&p).unwrap();
    std::fs::write(&p, &bytes[..bytes.len() - 7]).unwrap();
    let out = miprun(dir.path(), &["trace-info", "t.mipt"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("truncated"), "{}", stderr(&out));
}

#[test]
fn config_file_sits_between_defaults_and_flags() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("run.toml"),
        "blocks = 6\nsamples = 512\nestimator = \"gaussian\"\nproj_dim = 2\nprune_n = 2\n",
    )
    .unwrap();
    ok(dir.path(), &["--config", "run.toml", "simulate", "--out", "c.mipt"]);
    ok(dir.path(), &["--config", "run.toml", "select", "c.mipt", "--prune-n", "3"]);
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("c.mipt.select.json")).unwrap()).unwrap();
    assert_eq!(v["config"]["prune_n"], 3);
    assert_eq!(v["config"]["estimator"]["kind"], "gaussian");
    assert_eq!(v["trace"]["num_samples"], 512);

    std::fs::write(dir.path().join("bad.toml"), "prune = 2\n").unwrap();
    assert_eq!(code(&miprun(dir.path(), &["--config", "bad.toml", "select", "c.mipt"])), 2);
}

#[test]
fn reports_do_not_depend_on_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let max = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).to_string();
    let mut previous: Option<Vec<String>> = None;
    for w in ["1", "4", max.as_str()] {
        let d = dir.path();
        ok(d, &["--workers", w, "simulate", "--blocks", "8", "--samples", "1024", "--plant", "3-4:0.01", "--out", "w.mipt"]);
        let trace = format!("{:?}", std::fs::read(d.join("w.mipt")).unwrap());
        ok(d, &["--workers", w, "score", "w.mipt"]);
        ok(d, &["--workers", w, "select", "w.mipt", "--prune-n", "2"]);
        ok(d, &["--workers", w, "oracle", "w.mipt", "--prune-n", "2"]);
        ok(d, &["--workers", w, "compare", "w.mipt.select.json", "w.mipt.oracle.json", "--out", "cmp.json"]);
        ok(d, &["--workers", w, "trace-info", "w.mipt", "--out", "info.json"]);
        let now: Vec<String> = std::iter::once(trace)
            .chain(
                ["w.mipt.score.json", "w.mipt.select.json", "w.mipt.oracle.json", "cmp.json", "info.json"]
                    .iter()
                    .map(|f| stable_part(&d.join(f))),
            )
            .collect();
        if let Some(prev) = &previous {
            assert_eq!(prev, &now, "reports changed at --workers {w}");
        }
        previous = Some(now);
    }
}

#[test]
fn env_var_sets_the_pool_size() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["simulate", "--blocks", "3", "--dim", "4", "--samples", "64", "--out", "e.mipt"]);
    let run = |env: &str| {
        Command::new(env!("CARGO_BIN_EXE_miprun"))
            .current_dir(dir.path())
            .env("MIPRUN_WORKERS", env)
            .args(["trace-info", "e.mipt", "--out", "e.json"])
            .output()
            .unwrap()
    };
    assert!(run("3").status.success());
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("e.json")).unwrap()).unwrap();
    assert_eq!(v["runtime"]["workers"], 3);
    assert_eq!(code(&run("lots")), 2);
}
