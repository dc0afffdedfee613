use std::collections::BTreeSet;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use miprun_core::importance::{ImportanceTable, TraceEstimator};
use miprun_core::mi::{EstimatorConfig, EstimatorKind};
use miprun_core::selection::{
    fast_block_select_with_table, greedy_select, oracle_select, PruneResult, SelectConfig,
};
use miprun_core::stats::{jaccard, spearman};
use miprun_core::toy::{build_toy_model, run_toy_model, Nonlinearity, ToyModelSpec};
use miprun_core::trace::{read_trace_unvalidated, sidecar_path, read_sidecar, Trace};
use serde::Serialize;

use crate::config::{pick, FileConfig, Plant, ProjDim};
use crate::report::{ResolvedConfig, RunReport, TraceSummary};
use crate::{CliError, CompareArgs, EstimatorArgs, OracleArgs, ScoreArgs, SelectArgs, SimulateArgs, TraceInfoArgs};

pub struct Context {
    pub file: FileConfig,
    pub workers: usize,
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

pub fn simulate(ctx: &Context, a: SimulateArgs) -> Result<(), CliError> {
    let f = &ctx.file;
    let blocks = a
        .blocks
        .or(f.blocks)
        .ok_or_else(|| usage("missing required flag --blocks"))?;
    let seed = pick(a.seed, f.seed, 0);
    let strong = pick(a.gain, f.gain, 1.0);
    let nonlinearity: Nonlinearity = pick(a.nonlinearity, f.nonlinearity.clone(), "linear".into())
        .parse()
        .map_err(|e: miprun_core::Error| usage(e.to_string()))?;
    let plants: Vec<Plant> = if a.plant.is_empty() {
        f.plant
            .iter()
            .flatten()
            .map(|s| s.parse().map_err(usage))
            .collect::<Result<_, _>>()?
    } else {
        a.plant
    };

    let mut spec = ToyModelSpec {
        num_blocks: blocks,
        hidden_dim: pick(a.dim, f.dim, 16),
        gains: vec![strong; blocks],
        nonlinearity,
        weight_seed: seed,
        sample_seed: pick(a.sample_seed, f.sample_seed, seed),
        num_samples: pick(a.samples, f.samples, 4096),
    };
    for p in &plants {
        let redundant: BTreeSet<usize> = (p.first..=p.last).collect();
        let planted = spec.plant_redundancy(&redundant, p.gain, strong)?;
        for b in redundant {
            spec.gains[b - 1] = planted.gains[b - 1];
        }
    }
    spec.validate()?;

    let trace = run_toy_model(&build_toy_model(&spec), &spec)?;
    let out = a.out.unwrap_or_else(|| PathBuf::from("trace.mipt"));
    trace.save(&out)?;
    println!("wrote {}", out.display());
    println!("fingerprint {}", trace.fingerprint());
    println!(
        "T={} S={} D={} gains={:?}",
        spec.num_blocks, spec.num_samples, spec.hidden_dim, spec.gains
    );
    Ok(())
}

fn estimator_config(f: &FileConfig, a: &EstimatorArgs) -> Result<EstimatorConfig, CliError> {
    let d = EstimatorConfig::default();
    let kind: EstimatorKind = match a.estimator.clone().or(f.estimator.clone()) {
        Some(s) => s.parse().map_err(|e: miprun_core::Error| usage(e.to_string()))?,
        None => d.kind,
    };
    let cfg = EstimatorConfig {
        kind,
        knn_k: pick(a.knn_k, f.knn_k, d.knn_k),
        bins: pick(a.bins, f.bins, d.bins),
        projection_dim: pick(a.proj_dim, f.proj_dim, ProjDim(d.projection_dim)).0,
        seed: pick(a.seed, f.seed, d.seed),
        standardize: d.standardize,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn load_trace(path: &Path) -> Result<(Trace, String), CliError> {
    if path.as_os_str().is_empty() {
        return Err(usage("trace path is empty"));
    }
    let trace = Trace::load(path)?;
    let fingerprint = trace.fingerprint();
    Ok((trace, fingerprint))
}

fn summary(path: &Path, trace: &Trace, fingerprint: &str) -> TraceSummary {
    TraceSummary {
        path: path.display().to_string(),
        fingerprint: fingerprint.to_string(),
        num_blocks: trace.num_blocks(),
        num_samples: trace.num_samples(),
        hidden_dim: trace.hidden_dim(),
    }
}

fn default_out(trace: &Path, suffix: &str) -> PathBuf {
    let mut name = trace.as_os_str().to_owned();
    name.push(format!(".{suffix}.json"));
    PathBuf::from(name)
}

fn print_table(table: &ImportanceTable) {
    println!("{:>4}  {:>5}  {:>12}", "rank", "block", "importance");
    for (rank, b) in table.ascending().into_iter().enumerate() {
        println!("{:>4}  {:>5}  {:>12.6}", rank + 1, b, table.per_block()[b - 1]);
    }
}

pub fn score(ctx: &Context, a: ScoreArgs) -> Result<(), CliError> {
    let est_cfg = estimator_config(&ctx.file, &a.estimator)?;
    let config = ResolvedConfig {
        inputs: vec![a.trace.display().to_string()],
        estimator: Some(est_cfg.clone()),
        ..Default::default()
    };
    let mut report = RunReport::new("score", config, ctx.workers);
    let (trace, fp) = report.time("load", || load_trace(&a.trace))?;
    let est = TraceEstimator::with_trace_fingerprint(&trace, est_cfg, &fp)?;
    let table = report.time("score", || ImportanceTable::score_blocks(&est))?;

    print_table(&table);
    report.trace = Some(summary(&a.trace, &trace, &fp));
    report.importance = Some(table.report());
    let out = a.out.unwrap_or_else(|| default_out(&a.trace, "score"));
    report.write(&out)?;
    println!("report {}", out.display());
    Ok(())
}

fn fmt_set(blocks: &[usize]) -> String {
    blocks.iter().map(|b| b.to_string()).collect::<Vec<_>>().join(",")
}

fn method_name(r: &PruneResult) -> String {
    serde_json::to_value(r.method)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

fn print_result(r: &PruneResult) {
    println!(
        "{}: P = {}  objective = {:.6}  iterations = {}  converged = {}{}",
        method_name(r),
        fmt_set(&r.final_p),
        r.objective,
        r.iterations_used,
        r.converged,
        if r.cycle_detected { "  (cycle)" } else { "" }
    );
}

fn print_log(r: &PruneResult) {
    for rec in &r.history {
        println!(
            "  iteration {}: P = {}  objective = {:.6}",
            rec.iteration,
            fmt_set(&rec.pruning),
            rec.objective
        );
        for g in &rec.groups {
            let shortlist = g
                .shortlist
                .iter()
                .map(|c| format!("{}:{:.4}", c.span, c.exact.unwrap_or(f64::NAN)))
                .collect::<Vec<_>>()
                .join(" ");
            println!(
                "    group {} windows={} K={} [{}] -> {}",
                g.group, g.windows, g.k, shortlist, g.chosen
            );
        }
    }
}

fn prune_n(flag: Option<usize>, f: &FileConfig) -> Result<usize, CliError> {
    flag.or(f.prune_n)
        .ok_or_else(|| usage("missing required flag --prune-n"))
}

pub fn select(ctx: &Context, a: SelectArgs) -> Result<(), CliError> {
    let f = &ctx.file;
    let est_cfg = estimator_config(f, &a.estimator)?;
    let n = prune_n(a.prune_n, f)?;
    let sel = SelectConfig {
        prune_count: n,
        extra_k: pick(a.extra_k, f.extra_k, 5),
        max_iterations: pick(a.max_iterations, f.max_iterations, 50),
        estimator: est_cfg.clone(),
    };
    let config = ResolvedConfig {
        inputs: vec![a.trace.display().to_string()],
        estimator: Some(est_cfg.clone()),
        prune_n: Some(n),
        extra_k: Some(sel.extra_k),
        max_iterations: Some(sel.max_iterations),
        ..Default::default()
    };
    let mut report = RunReport::new("select", config, ctx.workers);
    let (trace, fp) = report.time("load", || load_trace(&a.trace))?;
    sel.validate(trace.num_blocks())?;
    let est = TraceEstimator::with_trace_fingerprint(&trace, est_cfg, &fp)?;
    let table = report.time("score", || ImportanceTable::score_blocks(&est))?;
    let fast = report.time("fast", || fast_block_select_with_table(&table, &est, &sel))?;
    let greedy = report.time("greedy", || greedy_select(&table, &est, n))?;

    print_result(&fast);
    print_log(&fast);
    print_result(&greedy);

    report.trace = Some(summary(&a.trace, &trace, &fp));
    report.importance = Some(table.report());
    let converged = fast.converged;
    let iterations = fast.iterations_used;
    let best = fmt_set(&fast.final_p);
    report.results = vec![fast, greedy];
    let out = a.out.unwrap_or_else(|| default_out(&a.trace, "select"));
    report.write(&out)?;
    println!("report {}", out.display());
    if !converged {
        return Err(CliError::NotConverged(format!(
            "stopped after {iterations} iterations; best P = {best}"
        )));
    }
    Ok(())
}

pub fn oracle(ctx: &Context, a: OracleArgs) -> Result<(), CliError> {
    let f = &ctx.file;
    let est_cfg = estimator_config(f, &a.estimator)?;
    let n = prune_n(a.prune_n, f)?;
    let config = ResolvedConfig {
        inputs: vec![a.trace.display().to_string()],
        estimator: Some(est_cfg.clone()),
        prune_n: Some(n),
        ..Default::default()
    };
    let mut report = RunReport::new("oracle", config, ctx.workers);
    let (trace, fp) = report.time("load", || load_trace(&a.trace))?;
    let est = TraceEstimator::with_trace_fingerprint(&trace, est_cfg.clone(), &fp)?;
    let sel = SelectConfig {
        estimator: est_cfg,
        ..SelectConfig::new(n)
    };
    let result = report.time("oracle", || oracle_select(&est, &sel))?;

    println!("subsets evaluated: {}", result.subsets_evaluated.unwrap_or(0));
    print_result(&result);
    report.trace = Some(summary(&a.trace, &trace, &fp));
    report.results = vec![result];
    let out = a.out.unwrap_or_else(|| default_out(&a.trace, "oracle"));
    report.write(&out)?;
    println!("report {}", out.display());
    Ok(())
}

#[derive(Serialize)]
struct ResultPair {
    left: String,
    right: String,
    objective_delta: f64,
    jaccard: f64,
}

#[derive(Serialize)]
struct RankPair {
    left: String,
    right: String,
    spearman: Option<f64>,
}

#[derive(Serialize)]
struct Comparison {
    pairs: Vec<ResultPair>,
    rank_correlations: Vec<RankPair>,
    sandwich: Option<bool>,
}

pub fn compare(ctx: &Context, a: CompareArgs) -> Result<(), CliError> {
    let reports = a
        .reports
        .iter()
        .map(|p| RunReport::read(p))
        .collect::<Result<Vec<_>, _>>()?;
    let traces = reports
        .iter()
        .zip(&a.reports)
        .map(|(r, p)| {
            r.trace
                .clone()
                .ok_or_else(|| usage(format!("{} has no trace section", p.display())))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let base = &traces[0];
    for (t, p) in traces.iter().zip(&a.reports).skip(1) {
        if a.cross_trace {
            if t.num_blocks != base.num_blocks {
                return Err(usage(format!(
                    "{} covers {} blocks, baseline covers {}",
                    p.display(),
                    t.num_blocks,
                    base.num_blocks
                )));
            }
        } else if t.fingerprint != base.fingerprint {
            return Err(usage(format!(
                "trace fingerprint of {} ({}) differs from the baseline ({}); pass --cross-trace to compare across traces",
                p.display(),
                t.fingerprint,
                base.fingerprint
            )));
        }
    }

    let label = |i: usize, m: Option<&PruneResult>| match m {
        Some(r) => format!("#{i}:{}", method_name(r)),
        None => format!("#{i}"),
    };
    let entries: Vec<(String, &PruneResult)> = reports
        .iter()
        .enumerate()
        .flat_map(|(i, r)| r.results.iter().map(move |res| (i, res)))
        .map(|(i, res)| (label(i, Some(res)), res))
        .collect();

    let mut pairs = Vec::new();
    for (i, (ln, l)) in entries.iter().enumerate() {
        for (rn, r) in &entries[i + 1..] {
            let ls: BTreeSet<usize> = l.final_p.iter().copied().collect();
            let rs: BTreeSet<usize> = r.final_p.iter().copied().collect();
            pairs.push(ResultPair {
                left: ln.clone(),
                right: rn.clone(),
                objective_delta: r.objective - l.objective,
                jaccard: jaccard(&ls, &rs),
            });
        }
    }

    let mut ranks = Vec::new();
    for i in 0..reports.len() {
        for j in i + 1..reports.len() {
            if let (Some(a_imp), Some(b_imp)) = (&reports[i].importance, &reports[j].importance) {
                ranks.push(RankPair {
                    left: label(i, None),
                    right: label(j, None),
                    spearman: spearman(&a_imp.per_block, &b_imp.per_block),
                });
            }
        }
    }

    // greedy <= fast <= oracle over results sharing a trace.
    let of = |m: &str| {
        entries
            .iter()
            .filter(|(name, _)| name.ends_with(m))
            .map(|(_, r)| r.objective)
            .collect::<Vec<_>>()
    };
    let (greedy, fast, oracle) = (of(":greedy"), of(":fast"), of(":oracle"));
    let sandwich = if a.cross_trace || (fast.is_empty() && greedy.is_empty()) || oracle.is_empty() {
        None
    } else {
        let tol = 1e-9;
        let top = oracle.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Some(
            fast.iter().chain(&greedy).all(|&v| v <= top + tol)
                && greedy.iter().all(|&g| fast.iter().all(|&f| g <= f + tol)),
        )
    };

    for (i, p) in a.reports.iter().enumerate() {
        println!("#{i}  {}  ({})", p.display(), reports[i].subcommand);
    }
    if !pairs.is_empty() {
        println!("{:<12} {:<12} {:>14} {:>8}", "left", "right", "objective_delta", "jaccard");
        for p in &pairs {
            println!(
                "{:<12} {:<12} {:>14.6} {:>8.4}",
                p.left, p.right, p.objective_delta, p.jaccard
            );
        }
    }
    for r in &ranks {
        match r.spearman {
            Some(v) => println!("per-block rank correlation {} vs {}: {v:.4}", r.left, r.right),
            None => println!("per-block rank correlation {} vs {}: undefined", r.left, r.right),
        }
    }
    if let Some(ok) = sandwich {
        println!("sandwich greedy <= fast <= oracle: {}", if ok { "holds" } else { "VIOLATED" });
    }

    if let Some(out) = &a.out {
        let config = ResolvedConfig {
            inputs: a.reports.iter().map(|p| p.display().to_string()).collect(),
            cross_trace: Some(a.cross_trace),
            ..Default::default()
        };
        let mut report = RunReport::new("compare", config, ctx.workers);
        report.trace = Some(base.clone());
        report.details = Some(
            serde_json::to_value(Comparison {
                pairs,
                rank_correlations: ranks,
                sandwich,
            })
            .expect("comparison serializes"),
        );
        report.write(out)?;
        println!("report {}", out.display());
    }
    if sandwich == Some(false) {
        return Err(CliError::Io("sandwich property violated".into()));
    }
    Ok(())
}

#[derive(Serialize)]
struct SnapshotStats {
    index: usize,
    mean: f64,
    std: f64,
    non_finite: usize,
    identical_to_previous: bool,
}

#[derive(Serialize)]
struct TraceInfo {
    version: u32,
    num_blocks: usize,
    num_samples: usize,
    hidden_dim: usize,
    dtype: u32,
    file_bytes: u64,
    non_finite_total: usize,
    first_non_finite: Option<[usize; 3]>,
    snapshots: Vec<SnapshotStats>,
    sidecar: Option<std::collections::BTreeMap<String, String>>,
}

pub fn trace_info(ctx: &Context, a: TraceInfoArgs) -> Result<(), CliError> {
    if a.trace.as_os_str().is_empty() {
        return Err(usage("trace path is empty"));
    }
    let file = File::open(&a.trace)
        .map_err(|e| CliError::Io(format!("cannot open {}: {e}", a.trace.display())))?;
    let trace = read_trace_unvalidated(BufReader::new(file)).map_err(|e| {
        if let miprun_core::Error::Truncated { expected, actual } = e.root() {
            CliError::Io(format!(
                "{} is truncated: header promises {expected} bytes, file has {actual}",
                a.trace.display()
            ))
        } else {
            CliError::Core(e)
        }
    })?;

    let h = trace.header();
    let mut snapshots = Vec::new();
    let mut first_bad = None;
    let mut total_bad = 0;
    for i in 0..=trace.num_blocks() {
        let snap = trace.snapshot(i)?;
        let (mut n, mut sum, mut sq, mut bad) = (0usize, 0.0f64, 0.0f64, 0usize);
        for ((r, c), &v) in snap.indexed_iter() {
            if v.is_finite() {
                n += 1;
                sum += f64::from(v);
                sq += f64::from(v) * f64::from(v);
            } else {
                bad += 1;
                first_bad.get_or_insert([i, r, c]);
            }
        }
        total_bad += bad;
        let mean = if n > 0 { sum / n as f64 } else { 0.0 };
        let var = if n > 0 { (sq / n as f64 - mean * mean).max(0.0) } else { 0.0 };
        let identical = i > 0 && {
            let prev = trace.snapshot(i - 1)?;
            prev.iter().zip(snap.iter()).all(|(x, y)| x.to_bits() == y.to_bits())
        };
        snapshots.push(SnapshotStats {
            index: i,
            mean,
            std: var.sqrt(),
            non_finite: bad,
            identical_to_previous: identical,
        });
    }
    let side = sidecar_path(&a.trace);
    let sidecar = if side.exists() { Some(read_sidecar(&side)?) } else { None };
    let info = TraceInfo {
        version: h.version,
        num_blocks: trace.num_blocks(),
        num_samples: trace.num_samples(),
        hidden_dim: trace.hidden_dim(),
        dtype: h.dtype_code,
        file_bytes: h.file_len(),
        non_finite_total: total_bad,
        first_non_finite: first_bad,
        snapshots,
        sidecar,
    };

    println!(
        "MIPT v{}  T={}  S={}  D={}  dtype={} (f32)  {} bytes",
        info.version, info.num_blocks, info.num_samples, info.hidden_dim, info.dtype, info.file_bytes
    );
    println!("{:>5}  {:>12}  {:>12}  {:>10}  same_as_prev", "snap", "mean", "std", "nonfinite");
    for s in &info.snapshots {
        println!(
            "{:>5}  {:>12.6}  {:>12.6}  {:>10}  {}",
            s.index, s.mean, s.std, s.non_finite, s.identical_to_previous
        );
    }
    match info.first_non_finite {
        None => println!("non-finite scan: clean"),
        Some([s, r, c]) => println!(
            "non-finite scan: {} values, first at snapshot {s}, row {r}, column {c}",
            info.non_finite_total
        ),
    }
    if let Some(meta) = &info.sidecar {
        for (k, v) in meta {
            println!("meta {k} = {v}");
        }
    }

    if let Some(out) = &a.out {
        let config = ResolvedConfig {
            inputs: vec![a.trace.display().to_string()],
            ..Default::default()
        };
        let mut report = RunReport::new("trace-info", config, ctx.workers);
        report.trace = Some(summary(&a.trace, &trace, &trace.fingerprint()));
        report.details = Some(serde_json::to_value(&info).expect("info serializes"));
        report.write(out)?;
    }
    Ok(())
}
