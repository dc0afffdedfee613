//! JSON run reports. Key order follows field order; `runtime` comes last and
//! is the only part that may differ between identical invocations.

use std::collections::BTreeMap;
use std::path::Path;

use miprun_core::importance::ImportanceReport;
use miprun_core::mi::EstimatorConfig;
use miprun_core::selection::PruneResult;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunReport {
    pub format_version: u32,
    pub subcommand: String,
    pub config: ResolvedConfig,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub trace: Option<TraceSummary>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub importance: Option<ImportanceReport>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub results: Vec<PruneResult>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub details: Option<serde_json::Value>,
    pub runtime: Runtime,
}

/// Everything needed to rerun the invocation, after defaults, config file
/// and flags are merged.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ResolvedConfig {
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub inputs: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub estimator: Option<EstimatorConfig>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub prune_n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub extra_k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub max_iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub cross_trace: Option<bool>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TraceSummary {
    pub path: String,
    pub fingerprint: String,
    pub num_blocks: usize,
    pub num_samples: usize,
    pub hidden_dim: usize,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Runtime {
    pub workers: usize,
    pub timings_ms: BTreeMap<String, f64>,
}

impl RunReport {
    pub fn new(subcommand: &str, config: ResolvedConfig, workers: usize) -> Self {
        RunReport {
            format_version: FORMAT_VERSION,
            subcommand: subcommand.to_string(),
            config,
            trace: None,
            importance: None,
            results: Vec::new(),
            details: None,
            runtime: Runtime {
                workers,
                timings_ms: BTreeMap::new(),
            },
        }
    }

    pub fn time<T>(&mut self, phase: &str, f: impl FnOnce() -> T) -> T {
        let start = std::time::Instant::now();
        let out = f();
        self.runtime
            .timings_ms
            .insert(phase.to_string(), start.elapsed().as_secs_f64() * 1e3);
        out
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(self).expect("report serializes");
        text.push('\n');
        std::fs::write(path, text)
            .map_err(|e| CliError::Io(format!("cannot write report {}: {e}", path.display())))
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read report {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Io(format!("{} is not a run report: {e}", path.display())))
    }
}
