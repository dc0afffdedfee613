//! Synthetic residual streams with controllable per-block strength.
//!
//! Block `i` applies `h_i = h_{i-1} + gain_i * f_i(h_{i-1})` where `f_i` is a
//! random linear map with unit spectral norm, optionally followed by `tanh`.
//! A gain of zero makes the block an exact identity.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Array3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::trace::Trace;

const POWER_STEPS: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Nonlinearity {
    Linear,
    Tanh,
}

impl fmt::Display for Nonlinearity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Nonlinearity::Linear => "linear",
            Nonlinearity::Tanh => "tanh",
        })
    }
}

impl FromStr for Nonlinearity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "linear" => Ok(Nonlinearity::Linear),
            "tanh" => Ok(Nonlinearity::Tanh),
            other => Err(Error::Parameter(format!(
                "unknown nonlinearity {other:?} (expected linear or tanh)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyModelSpec {
    pub num_blocks: usize,
    pub hidden_dim: usize,
    /// One non-negative gain per block.
    pub gains: Vec<f64>,
    pub nonlinearity: Nonlinearity,
    pub weight_seed: u64,
    pub sample_seed: u64,
    pub num_samples: usize,
}

impl ToyModelSpec {
    /// Default fixture scale: `D = 16`, `S = 4096`, linear blocks.
    pub fn with_gains(gains: Vec<f64>) -> Self {
        ToyModelSpec {
            num_blocks: gains.len(),
            hidden_dim: 16,
            gains,
            nonlinearity: Nonlinearity::Linear,
            weight_seed: 0,
            sample_seed: 0,
            num_samples: 4096,
        }
    }

    pub fn uniform(num_blocks: usize, gain: f64) -> Self {
        Self::with_gains(vec![gain; num_blocks])
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_blocks < 1 {
            return Err(Error::Parameter("toy model needs at least one block".into()));
        }
        if self.hidden_dim < 1 {
            return Err(Error::Parameter("hidden width must be positive".into()));
        }
        if self.num_samples < 2 {
            return Err(Error::Parameter("toy model needs at least two samples".into()));
        }
        if self.gains.len() != self.num_blocks {
            return Err(Error::Parameter(format!(
                "{} gains for {} blocks",
                self.gains.len(),
                self.num_blocks
            )));
        }
        if let Some((i, g)) = self
            .gains
            .iter()
            .enumerate()
            .find(|(_, g)| !(g.is_finite() && **g >= 0.0))
        {
            return Err(Error::Parameter(format!(
                "gain of block {} must be finite and non-negative, got {g}",
                i + 1
            )));
        }
        Ok(())
    }

    /// Weak gain on `redundant` blocks, strong gain everywhere else.
    pub fn plant_redundancy(
        &self,
        redundant: &BTreeSet<usize>,
        weak_gain: f64,
        strong_gain: f64,
    ) -> Result<Self> {
        if weak_gain >= strong_gain {
            return Err(Error::Parameter(format!(
                "weak gain {weak_gain} must be below strong gain {strong_gain}"
            )));
        }
        if let Some(&b) = redundant.iter().find(|&&b| b < 1 || b > self.num_blocks) {
            return Err(Error::Bounds(format!(
                "planted block {b} outside 1..={}",
                self.num_blocks
            )));
        }
        let gains = (1..=self.num_blocks)
            .map(|b| if redundant.contains(&b) { weak_gain } else { strong_gain })
            .collect();
        Ok(ToyModelSpec {
            gains,
            ..self.clone()
        })
    }

    pub fn provenance(&self) -> BTreeMap<String, String> {
        let gains = self
            .gains
            .iter()
            .map(|g| g.to_string())
            .collect::<Vec<_>>()
            .join(",");
        [
            ("source", "toy_model".to_string()),
            ("num_blocks", self.num_blocks.to_string()),
            ("hidden_dim", self.hidden_dim.to_string()),
            ("num_samples", self.num_samples.to_string()),
            ("nonlinearity", self.nonlinearity.to_string()),
            ("weight_seed", self.weight_seed.to_string()),
            ("sample_seed", self.sample_seed.to_string()),
            ("gains", gains),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

#[derive(Clone, Debug)]
pub struct ToyModel {
    weights: Vec<Array2<f64>>,
    nonlinearity: Nonlinearity,
}

impl ToyModel {
    /// Normalized `D x D` block maps, block 1 first.
    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }
}

/// Largest singular value by power iteration on `W^T W`.
pub fn spectral_norm_estimate(w: &Array2<f64>, steps: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: ndarray::Array1<f64> =
        ndarray::Array1::from_shape_simple_fn(w.ncols(), || StandardNormal.sample(&mut rng));
    let mut sigma = 0.0;
    for _ in 0..steps {
        let norm = v.dot(&v).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        v /= norm;
        let u = w.dot(&v);
        sigma = u.dot(&u).sqrt();
        v = w.t().dot(&u);
    }
    sigma
}

pub fn build_toy_model(spec: &ToyModelSpec) -> ToyModel {
    let d = spec.hidden_dim;
    let weights = (1..=spec.num_blocks)
        .map(|block| {
            let block_seed = seed::derive(spec.weight_seed, &[block as u64]);
            let mut rng = ChaCha8Rng::seed_from_u64(block_seed);
            let w = Array2::from_shape_simple_fn((d, d), || {
                let z: f64 = StandardNormal.sample(&mut rng);
                z
            });
            let sigma = spectral_norm_estimate(&w, POWER_STEPS, block_seed ^ 0x5eed);
            if sigma > 0.0 {
                w / sigma
            } else {
                w
            }
        })
        .collect();
    ToyModel {
        weights,
        nonlinearity: spec.nonlinearity,
    }
}

/// Runs `S` standard-Gaussian inputs through the chain and records every
/// snapshot. Inputs are seeded per row, so the trace does not depend on
/// scheduling.
pub fn run_toy_model(model: &ToyModel, spec: &ToyModelSpec) -> Result<Trace> {
    spec.validate()?;
    if model.weights.len() != spec.num_blocks
        || model.weights.iter().any(|w| w.dim() != (spec.hidden_dim, spec.hidden_dim))
    {
        return Err(Error::Parameter("model does not match spec shape".into()));
    }
    let (t, s, d) = (spec.num_blocks, spec.num_samples, spec.hidden_dim);

    let rows: Vec<Vec<f64>> = (0..s)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(spec.sample_seed, &[r as u64]));
            (0..d).map(|_| StandardNormal.sample(&mut rng)).collect()
        })
        .collect();
    let mut h = Array2::from_shape_vec((s, d), rows.concat()).expect("row-major fill");

    let mut snapshots = Array3::<f32>::zeros((t + 1, s, d));
    snapshots.index_axis_mut(Axis(0), 0).assign(&h.mapv(|v| v as f32));
    for (i, (w, &gain)) in model.weights.iter().zip(&spec.gains).enumerate() {
        if gain != 0.0 {
            let mut update = h.dot(&w.t());
            if model.nonlinearity == Nonlinearity::Tanh {
                update.mapv_inplace(f64::tanh);
            }
            h.scaled_add(gain, &update);
            if h.iter().any(|v| !v.is_finite() || v.abs() > f64::from(f32::MAX)) {
                return Err(Error::Generation(format!(
                    "activations overflow f32 at block {}; use tanh blocks or smaller gains",
                    i + 1
                )));
            }
        }
        snapshots
            .index_axis_mut(Axis(0), i + 1)
            .assign(&h.mapv(|v| v as f32));
    }
    Ok(Trace::from_snapshots(snapshots)?.with_provenance(spec.provenance()))
}
