//! `miprun`: score transformer blocks by mutual information and pick which to
//! remove.
//!
//! Exit codes: 0 success, 1 I/O or data error, 2 usage error, 3 selection
//! did not converge, 4 oracle refused by the subset guard.

mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use miprun_core::Error;

use crate::config::{Plant, ProjDim};

#[derive(Debug, Parser)]
#[command(name = "miprun", version, about = "MI-based block pruning for residual networks")]
struct Cli {
    /// Worker threads (falls back to MIPRUN_WORKERS, then the core count).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// TOML file with defaults for any flag.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a toy residual-stream trace.
    Simulate(SimulateArgs),
    /// Per-block importance table.
    Score(ScoreArgs),
    /// Fast-Block-Select plus the greedy baseline.
    Select(SelectArgs),
    /// Exhaustive search over all N-subsets.
    Oracle(OracleArgs),
    /// Compare reports: objective deltas, rank correlation, set overlap.
    Compare(CompareArgs),
    /// Header, per-snapshot statistics and a non-finite scan.
    TraceInfo(TraceInfoArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Number of blocks T (required here or in the config file).
    #[arg(long)]
    pub blocks: Option<usize>,
    /// Hidden width D [default: 16].
    #[arg(long)]
    pub dim: Option<usize>,
    /// Samples S [default: 4096].
    #[arg(long)]
    pub samples: Option<usize>,
    /// Gain of every block not planted [default: 1.0].
    #[arg(long)]
    pub gain: Option<f64>,
    /// Redundant blocks and their gain, e.g. 5-8:0.01. Repeatable.
    #[arg(long)]
    pub plant: Vec<Plant>,
    /// linear or tanh [default: linear].
    #[arg(long)]
    pub nonlinearity: Option<String>,
    /// Weight seed [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Input sample seed [default: the weight seed].
    #[arg(long)]
    pub sample_seed: Option<u64>,
    /// Output trace [default: trace.mipt].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Clone)]
pub struct EstimatorArgs {
    /// ksg, gaussian or histogram [default: ksg].
    #[arg(long)]
    pub estimator: Option<String>,
    /// KSG neighbour count [default: 4].
    #[arg(long)]
    pub knn_k: Option<usize>,
    /// Histogram bins [default: 16].
    #[arg(long)]
    pub bins: Option<usize>,
    /// Projection width or `none` [default: 8].
    #[arg(long)]
    pub proj_dim: Option<ProjDim>,
    /// Estimator seed [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    pub trace: PathBuf,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
    /// Report path [default: <trace>.score.json].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    pub trace: PathBuf,
    /// Blocks to remove N (required here or in the config file).
    #[arg(long)]
    pub prune_n: Option<usize>,
    /// Extra exact evaluations per group k [default: 5].
    #[arg(long)]
    pub extra_k: Option<usize>,
    /// Refinement bound [default: 50].
    #[arg(long)]
    pub max_iterations: Option<usize>,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
    /// Report path [default: <trace>.select.json].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    pub trace: PathBuf,
    /// Blocks to remove N (required here or in the config file).
    #[arg(long)]
    pub prune_n: Option<usize>,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
    /// Report path [default: <trace>.oracle.json].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Two or more run reports; the first is the baseline.
    #[arg(required = true, num_args = 2..)]
    pub reports: Vec<PathBuf>,
    /// Allow reports from different traces with the same block count.
    #[arg(long)]
    pub cross_trace: bool,
    /// Also write the comparison as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TraceInfoArgs {
    pub trace: PathBuf,
    /// Also write the summary as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
    #[error("selection did not converge: {0}")]
    NotConverged(String),
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Io(_) => 1,
            CliError::Usage(_) => 2,
            CliError::NotConverged(_) => 3,
            CliError::Core(e) => match e.root() {
                Error::Parameter(_) | Error::Shape(_) | Error::Bounds(_) | Error::Generation(_) => 2,
                Error::Capability { .. } => 4,
                _ => 1,
            },
        }
    }
}

fn resolve_workers(flag: Option<usize>, file: Option<usize>) -> Result<usize, CliError> {
    let env = match std::env::var("MIPRUN_WORKERS") {
        Ok(v) if !v.trim().is_empty() => Some(v.trim().parse::<usize>().map_err(|_| {
            CliError::Usage(format!("MIPRUN_WORKERS must be a positive integer, got {v:?}"))
        })?),
        _ => None,
    };
    let n = flag.or(file).or(env).unwrap_or_else(|| {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    });
    if n == 0 {
        return Err(CliError::Usage("worker count must be positive".into()));
    }
    Ok(n)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(p) => config::FileConfig::load(p)?,
        None => config::FileConfig::default(),
    };
    let workers = resolve_workers(cli.workers, file.workers)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Io(format!("cannot start worker pool: {e}")))?;
    let ctx = commands::Context { file, workers };
    pool.install(|| match cli.command {
        Command::Simulate(a) => commands::simulate(&ctx, a),
        Command::Score(a) => commands::score(&ctx, a),
        Command::Select(a) => commands::select(&ctx, a),
        Command::Oracle(a) => commands::oracle(&ctx, a),
        Command::Compare(a) => commands::compare(&ctx, a),
        Command::TraceInfo(a) => commands::trace_info(&ctx, a),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = e.exit_code();
            eprintln!("error: {e}");
            ExitCode::from(code)
        }
    }
}
