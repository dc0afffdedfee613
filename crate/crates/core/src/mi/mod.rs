//! Mutual information between two sample matrices, in nats.
//!
//! Rows are samples and columns are coordinates. [`estimate_mi`] is the
//! entry point; it standardizes, optionally projects, dispatches to one of
//! the estimators below and clamps the result to `[0, ln S]`.

mod gaussian;
mod histogram;
mod ksg;
mod projection;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::digamma;

use crate::error::{Error, Result};
use crate::seed;

pub use gaussian::gaussian_mi;
pub use histogram::{equal_frequency_bins, histogram_mi};
pub use ksg::ksg_mi;
pub use projection::{projection_matrix, random_projection};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Ksg,
    Gaussian,
    Histogram,
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EstimatorKind::Ksg => "ksg",
            EstimatorKind::Gaussian => "gaussian",
            EstimatorKind::Histogram => "histogram",
        })
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ksg" => Ok(EstimatorKind::Ksg),
            "gaussian" => Ok(EstimatorKind::Gaussian),
            "histogram" => Ok(EstimatorKind::Histogram),
            other => Err(Error::Parameter(format!(
                "unknown estimator {other:?} (expected ksg, gaussian or histogram)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub kind: EstimatorKind,
    /// KSG neighbour count.
    pub knn_k: usize,
    /// Histogram bins per marginal.
    pub bins: usize,
    /// Random projection width applied when the input is wider than this.
    pub projection_dim: Option<usize>,
    pub seed: u64,
    pub standardize: bool,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            kind: EstimatorKind::Ksg,
            knn_k: 4,
            bins: 16,
            projection_dim: Some(8),
            seed: 0,
            standardize: true,
        }
    }
}

impl EstimatorConfig {
    /// What this estimator reports for a smooth invertible map on `samples`
    /// points: `psi(S) - psi(k)` for KSG, `ln bins` for histograms, `ln S`
    /// for the Gaussian estimator.
    pub fn ceiling(&self, samples: usize) -> f64 {
        let cap = (samples.max(1) as f64).ln();
        match self.kind {
            EstimatorKind::Ksg if samples > self.knn_k => {
                (digamma(samples as f64) - digamma(self.knn_k as f64)).clamp(0.0, cap)
            }
            EstimatorKind::Histogram => (self.bins.min(samples).max(1) as f64).ln(),
            _ => cap,
        }
    }

    pub fn with_kind(kind: EstimatorKind) -> Self {
        EstimatorConfig {
            kind,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.knn_k == 0 {
            return Err(Error::Parameter("knn_k must be positive".into()));
        }
        if self.bins == 0 {
            return Err(Error::Parameter("bins must be positive".into()));
        }
        if self.projection_dim == Some(0) {
            return Err(Error::Parameter("projection_dim must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiEstimate {
    /// Nats, within `[0, ln S]`.
    pub value: f64,
    pub estimator_kind: EstimatorKind,
    pub effective_params: EstimatorConfig,
    pub sample_count: usize,
}

/// Estimates `I(X; Y)` for paired samples.
///
/// Exact copies (`X` and `Y` bitwise equal) carry unbounded continuous
/// information and return the `ln S` cap directly.
pub fn estimate_mi(
    x: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    config: &EstimatorConfig,
) -> Result<MiEstimate> {
    config.validate()?;
    let samples = x.nrows();
    if y.nrows() != samples {
        return Err(Error::Shape(format!(
            "X has {samples} samples but Y has {}",
            y.nrows()
        )));
    }
    if x.ncols() == 0 || y.ncols() == 0 {
        return Err(Error::Shape("inputs need at least one column".into()));
    }
    let min_samples = match config.kind {
        EstimatorKind::Ksg => (config.knn_k + 1).max(2),
        _ => 2,
    };
    if samples < min_samples {
        return Err(Error::Parameter(format!(
            "{samples} samples is too few for {} (need at least {min_samples})",
            config.kind
        )));
    }
    if config.kind == EstimatorKind::Histogram && config.bins > samples {
        return Err(Error::Parameter(format!(
            "{} bins exceed {samples} samples",
            config.bins
        )));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Parameter("inputs contain non-finite values".into()));
    }

    let cap = (samples as f64).ln();
    let raw = if is_exact_copy(x, y) {
        cap
    } else {
        match config.kind {
            EstimatorKind::Ksg => {
                let xp = prepare(x, config);
                let yp = prepare(y, config);
                ksg_mi(xp.view(), yp.view(), config.knn_k)?
            }
            EstimatorKind::Gaussian => {
                let xp = prepare(x, config);
                let yp = prepare(y, config);
                gaussian_mi(xp.view(), yp.view())?
            }
            EstimatorKind::Histogram => {
                let xs = scalar_projection(x, config, 0);
                let ys = scalar_projection(y, config, 1);
                histogram_mi(&xs, &ys, config.bins)?
            }
        }
    };
    if raw.is_nan() {
        return Err(Error::Numerical(format!("{} estimator produced NaN", config.kind)));
    }

    Ok(MiEstimate {
        value: raw.clamp(0.0, cap),
        estimator_kind: config.kind,
        effective_params: config.clone(),
        sample_count: samples,
    })
}

fn is_exact_copy(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> bool {
    x.dim() == y.dim() && x.iter().zip(y.iter()).all(|(a, b)| a.to_bits() == b.to_bits())
}

/// Standardize, project when wider than `projection_dim`, standardize again.
fn prepare(view: ArrayView2<'_, f64>, config: &EstimatorConfig) -> Array2<f64> {
    let mut m = view.to_owned();
    if config.standardize {
        standardize(&mut m);
    }
    match config.projection_dim {
        Some(d) if d < m.ncols() => {
            let mut projected = random_projection(m.view(), d, config.seed)
                .expect("target width checked against input width");
            if config.standardize {
                standardize(&mut projected);
            }
            projected
        }
        _ => m,
    }
}

/// One-dimensional view of a variable for the histogram estimator: a seeded
/// random unit direction per role (0 for X, 1 for Y).
fn scalar_projection(view: ArrayView2<'_, f64>, config: &EstimatorConfig, role: u64) -> Vec<f64> {
    let mut m = view.to_owned();
    if config.standardize {
        standardize(&mut m);
    }
    let dim = m.ncols();
    if dim == 1 {
        return m.column(0).to_vec();
    }
    let base = seed::derive(config.seed, &[dim as u64, 1, role]);
    let mut dir: Vec<f64> = (0..dim).map(|c| seed::signed_unit(base ^ c as u64)).collect();
    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        dir.iter_mut().for_each(|v| *v /= norm);
    } else {
        dir[0] = 1.0;
    }
    m.rows()
        .into_iter()
        .map(|row| row.iter().zip(&dir).map(|(a, b)| a * b).sum())
        .collect()
}

/// Per-column zero mean and unit (population) variance. Constant columns are
/// only centred.
pub fn standardize(m: &mut Array2<f64>) {
    let n = m.nrows() as f64;
    for mut col in m.axis_iter_mut(Axis(1)) {
        let mean = col.sum() / n;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let sd = var.sqrt();
        if sd > 0.0 && sd.is_finite() {
            col.mapv_inplace(|v| (v - mean) / sd);
        } else {
            col.mapv_inplace(|v| v - mean);
        }
    }
}

/// Widens an `f32` view for estimation.
pub fn to_f64(view: ArrayView2<'_, f32>) -> Array2<f64> {
    view.mapv(f64::from)
}


#[cfg(test)]
mod tests {
    use super::testdata::*;
    use super::*;

    #[test]
    fn independent_gaussians_near_zero() {
        let x = gaussian_matrix(10_000, 1, 1);
        let y = gaussian_matrix(10_000, 1, 2);
        for kind in [EstimatorKind::Ksg, EstimatorKind::Gaussian, EstimatorKind::Histogram] {
            let est = estimate_mi(x.view(), y.view(), &EstimatorConfig::with_kind(kind)).unwrap();
            assert!(est.value < 0.05, "{kind}: {}", est.value);
            assert_eq!(est.sample_count, 10_000);
        }
    }

    #[test]
    fn correlated_ksg_matches_closed_form() {
        let (x, y) = correlated_pair(10_000, 0.9, 3);
        let est = estimate_mi(x.view(), y.view(), &EstimatorConfig::default()).unwrap();
        assert!((est.value - analytic(0.9)).abs() < 0.05, "{}", est.value);
        assert!((analytic(0.9) - 0.830_366).abs() < 1e-5);
    }

    #[test]
    fn exact_copy_is_clamped_to_log_samples() {
        let x = gaussian_matrix(1000, 3, 4);
        for kind in [EstimatorKind::Ksg, EstimatorKind::Gaussian, EstimatorKind::Histogram] {
            let est = estimate_mi(x.view(), x.view(), &EstimatorConfig::with_kind(kind)).unwrap();
            assert_eq!(est.value, 1000f64.ln());
        }
        assert!((1000f64.ln() - 6.9078).abs() < 1e-4);
    }

    #[test]
    fn sample_count_mismatch() {
        let x = gaussian_matrix(10, 1, 1);
        let y = gaussian_matrix(11, 1, 1);
        let err = estimate_mi(x.view(), y.view(), &EstimatorConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn too_few_samples_for_k() {
        let x = gaussian_matrix(4, 1, 1);
        let y = gaussian_matrix(4, 1, 2);
        let err = estimate_mi(x.view(), y.view(), &EstimatorConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Parameter(_)));
    }

    #[test]
    fn symmetric_for_ksg_and_gaussian() {
        let x = gaussian_matrix(600, 12, 5);
        let y = &x * 0.7 + gaussian_matrix(600, 12, 6) * 0.5;
        for kind in [EstimatorKind::Ksg, EstimatorKind::Gaussian] {
            let cfg = EstimatorConfig::with_kind(kind);
            let a = estimate_mi(x.view(), y.view(), &cfg).unwrap().value;
            let b = estimate_mi(y.view(), x.view(), &cfg).unwrap().value;
            assert_eq!(a.to_bits(), b.to_bits(), "{kind}");
        }
    }

    #[test]
    fn standardize_handles_constant_columns() {
        let mut m = Array2::from_shape_vec((3, 2), vec![1.0, 5.0, 2.0, 5.0, 3.0, 5.0]).unwrap();
        standardize(&mut m);
        assert!(m.column(1).iter().all(|&v| v == 0.0));
        assert!(m.column(0).sum().abs() < 1e-12);
        let var = m.column(0).iter().map(|v| v * v).sum::<f64>() / 3.0;
        assert!((var - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kind_parses() {
        assert_eq!("KSG".parse::<EstimatorKind>().unwrap(), EstimatorKind::Ksg);
        assert!("mine".parse::<EstimatorKind>().is_err());
    }

    #[test]
    fn ceiling_bounds_near_copies() {
        let cfg = EstimatorConfig::default();
        // psi(4096) - psi(4)
        assert!((cfg.ceiling(4096) - 7.0619).abs() < 1e-3, "{}", cfg.ceiling(4096));
        assert_eq!(EstimatorConfig::with_kind(EstimatorKind::Gaussian).ceiling(1000), 1000f64.ln());
        assert_eq!(EstimatorConfig::with_kind(EstimatorKind::Histogram).ceiling(1000), 16f64.ln());

        let (x, _) = correlated_pair(2000, 0.0, 41);
        let y = x.mapv(|v| v * 1.001 + 1e-3 * v.sin());
        let est = estimate_mi(x.view(), y.view(), &cfg).unwrap();
        assert!(est.value <= cfg.ceiling(2000) + 1e-9);
        assert!(est.value > cfg.ceiling(2000) - 0.5, "{}", est.value);
    }
}
