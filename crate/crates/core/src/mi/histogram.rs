//! Plug-in MI over equal-frequency bins, for one-dimensional variables.

use crate::error::{Error, Result};

/// Equal-frequency bin index for every sample. Equal values always share the
/// bin of their first occurrence in sorted order.
pub fn equal_frequency_bins(values: &[f64], bins: usize) -> Vec<usize> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut out = vec![0; n];
    for rank in 0..n {
        let idx = order[rank];
        out[idx] = if rank > 0 && values[idx] == values[order[rank - 1]] {
            out[order[rank - 1]]
        } else {
            rank * bins / n
        };
    }
    out
}

/// `sum p_xy ln(p_xy / (p_x p_y))` over occupied cells of the joint table.
pub fn histogram_mi(x: &[f64], y: &[f64], bins: usize) -> Result<f64> {
    let n = x.len();
    if y.len() != n {
        return Err(Error::Shape(format!("x has {n} samples but y has {}", y.len())));
    }
    if bins == 0 || bins > n {
        return Err(Error::Parameter(format!(
            "bins must be in 1..={n}, got {bins}"
        )));
    }
    let bx = equal_frequency_bins(x, bins);
    let by = equal_frequency_bins(y, bins);
    let mut joint = vec![0usize; bins * bins];
    let mut px = vec![0usize; bins];
    let mut py = vec![0usize; bins];
    for (&a, &b) in bx.iter().zip(&by) {
        joint[a * bins + b] += 1;
        px[a] += 1;
        py[b] += 1;
    }
    let total = n as f64;
    let mut mi = 0.0;
    for a in 0..bins {
        for b in 0..bins {
            let c = joint[a * bins + b];
            if c == 0 {
                continue;
            }
            let pxy = c as f64 / total;
            let denom = (px[a] as f64 / total) * (py[b] as f64 / total);
            mi += pxy * (pxy / denom).ln();
        }
    }
    Ok(mi)
}
