//! Acceptance run: one PASS/FAIL line per criterion, then a summary.
//!
//! Runs as a plain binary under `cargo test`. It exits 0 after reporting so
//! the remaining suites still run; set `MIPRUN_ACCEPTANCE_STRICT=1` to turn
//! any FAIL into a non-zero exit.

use std::collections::BTreeSet;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use miprun_core::importance::{FixedSpans, ImportanceTable, Span, TraceEstimator};
use miprun_core::mi::{estimate_mi, gaussian_mi, EstimatorConfig};
use miprun_core::selection::{
    alternative_count, decompose_groups, fast_block_select, fast_block_select_with_table,
    greedy_select, init_sets, oracle_select_with_table, shortlist_size, PruneResult, SelectConfig,
};
use miprun_core::stats::spearman;
use miprun_core::toy::{build_toy_model, run_toy_model, ToyModelSpec};
use miprun_core::Trace;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn analytic(rho: f64) -> f64 {
    -0.5 * (1.0 - rho * rho).ln()
}

fn chain(n: usize, r1: f64, r2: f64, seed: u64) -> [Array2<f64>; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cols = [Array2::zeros((n, 1)), Array2::zeros((n, 1)), Array2::zeros((n, 1))];
    for i in 0..n {
        let x: f64 = StandardNormal.sample(&mut rng);
        let e1: f64 = StandardNormal.sample(&mut rng);
        let e2: f64 = StandardNormal.sample(&mut rng);
        let y = r1 * x + (1.0 - r1 * r1).sqrt() * e1;
        cols[0][[i, 0]] = x;
        cols[1][[i, 0]] = y;
        cols[2][[i, 0]] = r2 * y + (1.0 - r2 * r2).sqrt() * e2;
    }
    cols
}

fn estimator_accuracy() -> Outcome {
    let mut worst = 0.0f64;
    let mut slowest = 0.0f64;
    let mut parts = Vec::new();
    for (i, rho) in [0.0, 0.3, 0.6, 0.9].into_iter().enumerate() {
        let [x, y, _] = chain(10_000, rho, 0.0, 7000 + i as u64);
        let start = Instant::now();
        let v = estimate_mi(x.view(), y.view(), &EstimatorConfig::default())
            .expect("estimate")
            .value;
        let secs = start.elapsed().as_secs_f64();
        let err = (v - analytic(rho)).abs();
        worst = worst.max(err);
        slowest = slowest.max(secs);
        parts.push(format!("rho={rho}: {v:.4} vs {:.4}", analytic(rho)));
    }
    outcome(
        worst <= 0.05 && slowest < 30.0,
        format!("{}; max error {worst:.4}, slowest case {slowest:.2}s", parts.join(", ")),
    )
}

fn dpi_suite() -> Outcome {
    let mut worst = f64::NEG_INFINITY;
    let mut held = 0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xd1);
        let r1: f64 = rng.random_range(-0.95..0.95);
        let r2: f64 = rng.random_range(-0.95..0.95);
        let [x, y, z] = chain(50_000, r1, r2, seed);
        let xy = gaussian_mi(x.view(), y.view()).expect("mi");
        let yz = gaussian_mi(y.view(), z.view()).expect("mi");
        let xz = gaussian_mi(x.view(), z.view()).expect("mi");
        let excess = xz - xy.min(yz);
        worst = worst.max(excess);
        if excess <= 0.01 {
            held += 1;
        }
    }
    outcome(
        held == 20,
        format!("{held}/20 chains within 0.01 nats; largest MI(X,Z) - min(links) = {worst:.5}"),
    )
}

fn floor_ln(l: usize) -> usize {
    let mut m = 0;
    let mut power = std::f64::consts::E;
    while power <= l as f64 {
        m += 1;
        power *= std::f64::consts::E;
    }
    m
}

fn count_formulas() -> Outcome {
    let mut checked = 0;
    let mut bad = Vec::new();
    for t in 2..=16 {
        for n in 1..t {
            let expected = n.min(t - n);
            let est = FixedSpans::new(t, 64, |s: Span| 1.0 + 0.01 * s.start as f64);
            let table = ImportanceTable::score_blocks(&est).expect("table");
            let got = init_sets(&table, n).expect("init").alternative.len();
            checked += 1;
            if alternative_count(n, t) != expected || got != expected {
                bad.push(format!("M(T={t},N={n})"));
            }
        }
    }
    for l in 1..=16 {
        for k in 1..=8 {
            checked += 1;
            if shortlist_size(l, k, usize::MAX) != floor_ln(l) + k {
                bad.push(format!("K(L={l},k={k})"));
            }
        }
    }
    let worked = shortlist_size(2, 5, usize::MAX) == 5 && shortlist_size(3, 5, usize::MAX) == 6;
    outcome(
        bad.is_empty() && worked,
        format!(
            "{checked} cases, {} mismatches; L=2 -> K={}, L=3 -> K={} at k=5",
            bad.len(),
            shortlist_size(2, 5, usize::MAX),
            shortlist_size(3, 5, usize::MAX)
        ),
    )
}

fn walkthrough_mi(s: Span) -> f64 {
    let single = |b: usize| match b {
        27 => 5.0,
        26 => 4.8,
        24 => 4.6,
        28 => 4.0,
        23 => 3.9,
        25 => 3.8,
        22 => 3.0,
        29 => 2.9,
        21 => 2.8,
        20 => 2.7,
        b => 1.0 + 0.01 * b as f64,
    };
    if s.len() == 1 {
        return single(s.start);
    }
    match (s.start, s.end) {
        (24, 25) => 3.7,
        (26, 28) => 3.6,
        (24, 28) => 3.0,
        _ => 0.5 * s.blocks().map(single).fold(f64::INFINITY, f64::min),
    }
}

fn walkthrough() -> Outcome {
    let est = FixedSpans::new(32, 1024, walkthrough_mi);
    let table = ImportanceTable::score_blocks(&est).expect("table");
    let state = init_sets(&table, 5).expect("init");
    let groups = decompose_groups(&state.pruning);
    let r = fast_block_select(&est, &SelectConfig::new(5)).expect("select");
    let set = |v: &[usize]| v.iter().copied().collect::<BTreeSet<_>>();
    let checks = [
        ("ranking", table.ascending()[..5] == [27, 26, 24, 28, 23]),
        ("P0", state.pruning == set(&[23, 24, 26, 27, 28])),
        ("A", state.alternative == set(&[20, 21, 22, 25, 29])),
        ("groups", groups == vec![Span::new(23, 24), Span::new(26, 28)]),
        ("iteration 1", r.history.get(1).map(|h| h.pruning.clone()) == Some(vec![24, 25, 26, 27, 28])),
        ("converged at 2", r.converged && r.iterations_used == 2),
    ];
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    outcome(
        failed.is_empty(),
        if failed.is_empty() {
            format!("P0=23,24,26,27,28 -> {:?} after {} iterations", r.final_p, r.iterations_used)
        } else {
            format!("mismatch in {}", failed.join(", "))
        },
    )
}

fn toy_trace(gains: Vec<f64>, seed: u64) -> Trace {
    let mut spec = ToyModelSpec::with_gains(gains);
    spec.weight_seed = seed;
    spec.sample_seed = seed + 1000;
    run_toy_model(&build_toy_model(&spec), &spec).expect("toy trace")
}

struct ToyRun {
    n: usize,
    greedy: PruneResult,
    fast: PruneResult,
    oracle: PruneResult,
}

/// 100 toy models with gains drawn log-uniformly from [0.01, 1].
fn random_toy_runs() -> (Vec<ToyRun>, f64) {
    let start = Instant::now();
    let runs = (0..100u64)
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let gains: Vec<f64> = (0..12).map(|_| 10f64.powf(rng.random_range(-2.0..0.0))).collect();
            let n = 2 + (seed % 3) as usize;
            let trace = toy_trace(gains, seed);
            let cfg = SelectConfig::new(n);
            let est = TraceEstimator::new(&trace, cfg.estimator.clone()).expect("estimator");
            let table = ImportanceTable::score_blocks(&est).expect("table");
            ToyRun {
                n,
                greedy: greedy_select(&table, &est, n).expect("greedy"),
                fast: fast_block_select_with_table(&table, &est, &cfg).expect("fast"),
                oracle: oracle_select_with_table(&table, &est, n).expect("oracle"),
            }
        })
        .collect();
    (runs, start.elapsed().as_secs_f64())
}

fn oracle_agreement(runs: &[ToyRun], secs: f64) -> Outcome {
    let matched: Vec<bool> = runs
        .iter()
        .map(|r| (r.fast.objective - r.oracle.objective).abs() <= 1e-6)
        .collect();
    let agree = matched.iter().filter(|&&m| m).count();
    let sandwich = runs
        .iter()
        .filter(|r| {
            r.greedy.objective <= r.fast.objective + 1e-9 && r.fast.objective <= r.oracle.objective + 1e-9
        })
        .count();
    // A miss is structural when the oracle set leaves the P0 + A pool.
    let outside = runs
        .iter()
        .zip(&matched)
        .filter(|(r, m)| {
            let pool: BTreeSet<usize> = r.greedy.final_p.iter().chain(&r.greedy.alternative).copied().collect();
            !**m && !r.oracle.final_p.iter().all(|b| pool.contains(b))
        })
        .count();
    let by_n = |n: usize| {
        let of_n: Vec<_> = runs.iter().zip(&matched).filter(|(r, _)| r.n == n).collect();
        format!("N={n}: {}/{}", of_n.iter().filter(|(_, m)| **m).count(), of_n.len())
    };
    outcome(
        agree >= 90 && sandwich == 100 && secs < 600.0,
        format!(
            "fast = oracle in {agree}/100 ({}, {}, {}); {outside} of {} misses have the optimum outside P0+A; sandwich {sandwich}/100; {secs:.0}s",
            by_n(2),
            by_n(3),
            by_n(4),
            100 - agree
        ),
    )
}

fn monotone_and_terminating(runs: &[ToyRun]) -> Outcome {
    let good = runs
        .iter()
        .filter(|r| {
            let h = &r.fast.history;
            h.windows(2).all(|w| w[1].objective >= w[0].objective - 1e-9)
                && (r.fast.converged || r.fast.cycle_detected)
                && r.fast.iterations_used <= 50
        })
        .count();
    let most = runs.iter().map(|r| r.fast.iterations_used).max().unwrap_or(0);
    outcome(
        good == runs.len(),
        format!("{good}/{} runs monotone and converged or cycle-flagged; at most {most} iterations", runs.len()),
    )
}

fn planted_recovery(weak: &[usize]) -> (usize, usize) {
    let weak_set: BTreeSet<usize> = weak.iter().copied().collect();
    let mut hits = 0;
    for seed in 0..100u64 {
        let gains = ToyModelSpec::uniform(12, 1.0)
            .plant_redundancy(&weak_set, 0.01, 1.0)
            .expect("plant")
            .gains;
        let trace = toy_trace(gains, seed);
        let cfg = SelectConfig::new(weak.len());
        let est = TraceEstimator::new(&trace, cfg.estimator.clone()).expect("estimator");
        let r = fast_block_select(&est, &cfg).expect("select");
        if r.final_p == weak {
            hits += 1;
        }
    }
    (hits, 100)
}

fn planted() -> Outcome {
    let (run, total) = planted_recovery(&[5, 6, 7, 8]);
    let (two, _) = planted_recovery(&[3, 4, 9, 10]);
    outcome(
        run >= 95 && two >= 90,
        format!("contiguous 5..8 recovered {run}/{total}; runs 3,4 + 9,10 recovered {two}/{total}"),
    )
}

fn stable_part(path: &Path) -> String {
    let text = std::fs::read_to_string(path).expect("report");
    let cut = text.find("\"runtime\"").expect("runtime section");
    text[..cut].to_string()
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().expect("tempdir");
    let d = dir.path();
    let run = |workers: &str, args: &[&str]| {
        let out = Command::new(env!("CARGO_BIN_EXE_miprun"))
            .current_dir(d)
            .env_remove("MIPRUN_WORKERS")
            .arg("--workers")
            .arg(workers)
            .args(args)
            .output()
            .expect("binary runs");
        out.status.success()
    };
    let max = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).to_string();
    let mut snapshots: Vec<Vec<String>> = Vec::new();
    for w in ["1", "4", max.as_str()] {
        let ok = run(w, &["simulate", "--blocks", "12", "--samples", "2048", "--plant", "5-8:0.01", "--seed", "7", "--out", "d.mipt"])
            && run(w, &["score", "d.mipt"])
            && run(w, &["select", "d.mipt", "--prune-n", "4"])
            && run(w, &["oracle", "d.mipt", "--prune-n", "4"])
            && run(w, &["compare", "d.mipt.select.json", "d.mipt.oracle.json", "--out", "cmp.json"])
            && run(w, &["trace-info", "d.mipt", "--out", "info.json"]);
        if !ok {
            return outcome(false, format!("a subcommand failed at --workers {w}"));
        }
        let mut files = vec![format!("{:?}", std::fs::read(d.join("d.mipt")).expect("trace"))];
        for f in ["d.mipt.score.json", "d.mipt.select.json", "d.mipt.oracle.json", "cmp.json", "info.json"] {
            files.push(stable_part(&d.join(f)));
        }
        snapshots.push(files);
    }
    let same = snapshots.windows(2).all(|w| w[0] == w[1]);
    outcome(
        same,
        format!("simulate, score, select, oracle, compare, trace-info at --workers 1, 4, {max}: {}",
            if same { "identical" } else { "differ" }),
    )
}

fn stability() -> Outcome {
    let mut worst = f64::INFINITY;
    let mut parts = Vec::new();
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let mut spec = ToyModelSpec::with_gains((0..12).map(|_| 10f64.powf(rng.random_range(-2.0..0.0))).collect());
        spec.weight_seed = seed;
        let model = build_toy_model(&spec);
        let per_block = |sample_seed: u64| {
            let spec = ToyModelSpec { sample_seed, ..spec.clone() };
            let trace = run_toy_model(&model, &spec).expect("trace");
            let est = TraceEstimator::new(&trace, EstimatorConfig::default()).expect("estimator");
            ImportanceTable::score_blocks(&est).expect("table").per_block().to_vec()
        };
        let rho = spearman(&per_block(1), &per_block(2)).unwrap_or(f64::NAN);
        worst = worst.min(rho);
        parts.push(format!("{rho:.3}"));
    }
    outcome(
        worst > 0.9,
        format!("Spearman across two calibration draws, 5 models: {}", parts.join(", ")),
    )
}

fn main() {
    let started = Instant::now();
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let mut report = |name: &'static str, o: Outcome| {
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((name, o));
    };

    report("estimator accuracy", estimator_accuracy());
    report("data processing inequality", dpi_suite());
    report("count formulas M and K", count_formulas());
    report("algorithm walkthrough", walkthrough());
    let (runs, secs) = random_toy_runs();
    report("oracle agreement", oracle_agreement(&runs, secs));
    report("monotonicity and termination", monotone_and_terminating(&runs));
    report("planted recovery", planted());
    report("cli determinism", determinism());
    report("stability readout", stability());

    let passed = results.iter().filter(|(_, o)| o.pass).count();
    println!(
        "acceptance: {passed}/{} criteria passed in {:.0}s",
        results.len(),
        started.elapsed().as_secs_f64()
    );
    let strict = std::env::var("MIPRUN_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if strict && passed < results.len() {
        std::process::exit(1);
    }
}
