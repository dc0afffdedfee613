//! Closed-form MI under a joint-Gaussian assumption, via canonical correlations.

use std::cmp::Ordering;

use nalgebra::DMatrix;
use ndarray::ArrayView2;

use crate::error::{Error, Result};

const RIDGE: f64 = 1e-8;
const RHO_MAX: f64 = 1.0 - 1e-6;

/// `-1/2 * sum_i ln(1 - rho_i^2)` over the canonical correlations of the
/// sample covariance.
pub fn gaussian_mi(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> Result<f64> {
    let n = x.nrows();
    if y.nrows() != n {
        return Err(Error::Shape(format!("X has {n} samples but Y has {}", y.nrows())));
    }
    if n < 2 {
        return Err(Error::Parameter("gaussian MI needs at least two samples".into()));
    }
    // Fixed operand order keeps the result bit-identical under swapping.
    let (x, y) = if canonical_order(x, y) == Ordering::Greater {
        (y, x)
    } else {
        (x, y)
    };

    let (dx, dy) = (x.ncols(), y.ncols());
    let d = dx + dy;
    let mut z = DMatrix::<f64>::zeros(n, d);
    for (c, col) in x.columns().into_iter().chain(y.columns()).enumerate() {
        let mean = col.sum() / n as f64;
        for (r, v) in col.iter().enumerate() {
            z[(r, c)] = v - mean;
        }
    }
    let cov = (z.transpose() * &z) / (n as f64 - 1.0);

    let sxx = ridged(cov.view((0, 0), (dx, dx)).into_owned());
    let syy = ridged(cov.view((dx, dx), (dy, dy)).into_owned());
    let sxy = cov.view((0, dx), (dx, dy)).into_owned();

    let lx = sxx
        .clone()
        .cholesky()
        .ok_or_else(|| degenerate("X", &sxx))?
        .l();
    let ly = syy
        .clone()
        .cholesky()
        .ok_or_else(|| degenerate("Y", &syy))?
        .l();

    // Lx^-1 Sxy Ly^-T has the canonical correlations as singular values.
    let a = lx
        .solve_lower_triangular(&sxy)
        .ok_or_else(|| degenerate("X", &sxx))?;
    let whitened = ly
        .solve_lower_triangular(&a.transpose())
        .ok_or_else(|| degenerate("Y", &syy))?;

    let total = whitened
        .singular_values()
        .iter()
        .map(|&rho| {
            let rho = rho.clamp(0.0, RHO_MAX);
            -0.5 * (1.0 - rho * rho).ln()
        })
        .sum();
    Ok(total)
}

fn ridged(mut s: DMatrix<f64>) -> DMatrix<f64> {
    let mean_diag = s.diagonal().mean();
    let lambda = RIDGE * mean_diag;
    for i in 0..s.nrows() {
        s[(i, i)] += lambda;
    }
    s
}

fn degenerate(which: &str, s: &DMatrix<f64>) -> Error {
    let eig = s.symmetric_eigenvalues();
    let max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    Error::Numerical(format!(
        "{which} covariance is degenerate after ridge (condition estimate {condition:.3e}, smallest eigenvalue {min:.3e})"
    ))
}

fn canonical_order(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> Ordering {
    x.ncols().cmp(&y.ncols()).then_with(|| {
        x.iter()
            .map(|v| v.to_bits())
            .cmp(y.iter().map(|v| v.to_bits()))
    })
}
