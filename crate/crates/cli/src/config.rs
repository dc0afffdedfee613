//! Config file layer. Precedence is built-in defaults < file < flags.

use std::path::Path;
use std::str::FromStr;

use serde::Deserialize;

use crate::CliError;

/// Flat TOML keys, named like the long flags with `_` for `-`.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub blocks: Option<usize>,
    pub dim: Option<usize>,
    pub samples: Option<usize>,
    pub gain: Option<f64>,
    pub plant: Option<Vec<String>>,
    pub nonlinearity: Option<String>,
    pub seed: Option<u64>,
    pub sample_seed: Option<u64>,
    pub estimator: Option<String>,
    pub knn_k: Option<usize>,
    pub bins: Option<usize>,
    pub proj_dim: Option<ProjDim>,
    pub prune_n: Option<usize>,
    pub extra_k: Option<usize>,
    pub max_iterations: Option<usize>,
    pub workers: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| CliError::Usage(format!("bad config {}: {e}", path.display())))
    }
}

/// `--proj-dim`: a width or `none`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(try_from = "toml::Value")]
pub struct ProjDim(pub Option<usize>);

impl FromStr for ProjDim {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("none") {
            return Ok(ProjDim(None));
        }
        match s.parse::<usize>() {
            Ok(0) | Err(_) => Err(format!("expected a positive width or `none`, got {s:?}")),
            Ok(d) => Ok(ProjDim(Some(d))),
        }
    }
}

impl TryFrom<toml::Value> for ProjDim {
    type Error = String;

    fn try_from(v: toml::Value) -> Result<Self, Self::Error> {
        match v {
            toml::Value::Integer(i) if i > 0 => Ok(ProjDim(Some(i as usize))),
            toml::Value::String(s) => s.parse(),
            other => Err(format!("proj_dim must be a positive integer or \"none\", got {other}")),
        }
    }
}

/// `--plant 5-8:0.01` or `--plant 3:0.02`.
#[derive(Clone, Debug, PartialEq)]
pub struct Plant {
    pub first: usize,
    pub last: usize,
    pub gain: f64,
}

impl FromStr for Plant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || format!("expected FIRST-LAST:GAIN or BLOCK:GAIN, got {s:?}");
        let (range, gain) = s.split_once(':').ok_or_else(bad)?;
        let gain: f64 = gain.trim().parse().map_err(|_| bad())?;
        let (first, last) = match range.split_once('-') {
            Some((a, b)) => (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?),
            None => {
                let b = range.trim().parse().map_err(|_| bad())?;
                (b, b)
            }
        };
        if first == 0 || last < first {
            return Err(format!("block range {first}-{last} is empty or not 1-based"));
        }
        if !(gain.is_finite() && gain >= 0.0) {
            return Err(format!("planted gain must be finite and non-negative, got {gain}"));
        }
        Ok(Plant { first, last, gain })
    }
}

/// First present value, else the default.
pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}
