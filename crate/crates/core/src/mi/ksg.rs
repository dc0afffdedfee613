//! Kraskov-Stögbauer-Grassberger estimator (first variant) with exact
//! brute-force neighbour search under the max-coordinate metric.

use std::cmp::Ordering;

use ndarray::ArrayView2;
use rayon::prelude::*;
use statrs::function::gamma::digamma;

use crate::error::{Error, Result};
use crate::seed;

const JITTER: f64 = 1e-10;

/// `psi(k) + psi(S) - mean_i[psi(n_x(i) + 1) + psi(n_y(i) + 1)]`.
///
/// `n_x(i)` counts points strictly closer than the distance from point `i`
/// to its `k`-th joint neighbour, measured in the X marginal only. Exact
/// duplicates are separated by a content-seeded jitter of `1e-10` standard
/// deviations, so the result does not depend on row order.
pub fn ksg_mi(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>, k: usize) -> Result<f64> {
    let n = x.nrows();
    if y.nrows() != n {
        return Err(Error::Shape(format!("X has {n} samples but Y has {}", y.nrows())));
    }
    if k == 0 || n <= k {
        return Err(Error::Parameter(format!(
            "KSG needs 1 <= k < S, got k = {k}, S = {n}"
        )));
    }

    let xs = jittered_columns(x);
    let ys = jittered_columns(y);
    let psi: Vec<f64> = (0..=n)
        .map(|m| if m == 0 { f64::NAN } else { digamma(m as f64) })
        .collect();

    let mut terms: Vec<f64> = (0..n)
        .into_par_iter()
        .map_init(
            || Scratch::new(n, k),
            |s, i| {
                let (nx, ny) = s.marginal_counts(&xs, &ys, i);
                psi[nx + 1] + psi[ny + 1]
            },
        )
        .collect();
    // Summation order is fixed by value, not by row index.
    terms.sort_unstable_by(f64::total_cmp);
    let mean = terms.iter().sum::<f64>() / n as f64;
    Ok(psi[k] + psi[n] - mean)
}

struct Scratch {
    dx: Vec<f64>,
    dy: Vec<f64>,
    best: Vec<f64>,
}

impl Scratch {
    fn new(n: usize, k: usize) -> Self {
        Scratch {
            dx: vec![0.0; n],
            dy: vec![0.0; n],
            best: vec![f64::INFINITY; k],
        }
    }

    fn marginal_counts(&mut self, xs: &[Vec<f64>], ys: &[Vec<f64>], i: usize) -> (usize, usize) {
        let n = self.dx.len();
        let k = self.best.len();
        self.best.fill(f64::INFINITY);
        // Chunks keep the running maxima in L1 across columns.
        let mut lo = 0;
        while lo < n {
            let hi = (lo + CHUNK).min(n);
            chebyshev_from(xs, i, lo, &mut self.dx[lo..hi]);
            chebyshev_from(ys, i, lo, &mut self.dy[lo..hi]);
            if (lo..hi).contains(&i) {
                self.dx[i] = f64::INFINITY;
                self.dy[i] = f64::INFINITY;
            }
            for (&a, &b) in self.dx[lo..hi].iter().zip(&self.dy[lo..hi]) {
                let d = if a > b { a } else { b };
                if d < self.best[k - 1] {
                    let mut pos = k - 1;
                    while pos > 0 && self.best[pos - 1] > d {
                        self.best[pos] = self.best[pos - 1];
                        pos -= 1;
                    }
                    self.best[pos] = d;
                }
            }
            lo = hi;
        }
        let radius = self.best[k - 1];
        let nx = self.dx.iter().filter(|&&d| d < radius).count();
        let ny = self.dy.iter().filter(|&&d| d < radius).count();
        (nx, ny)
    }
}

const CHUNK: usize = 512;

/// `out[j] = max_c |cols[c][offset + j] - cols[c][i]|`
fn chebyshev_from(cols: &[Vec<f64>], i: usize, offset: usize, out: &mut [f64]) {
    let len = out.len();
    out.fill(0.0);
    for col in cols {
        let centre = col[i];
        for (o, &v) in out.iter_mut().zip(&col[offset..offset + len]) {
            let d = (v - centre).abs();
            *o = if d > *o { d } else { *o };
        }
    }
}

/// Column-major copy with duplicate-breaking jitter. Each row's jitter is
/// derived from its own bits and its occurrence index among identical rows.
fn jittered_columns(m: ArrayView2<'_, f64>) -> Vec<Vec<f64>> {
    let (n, d) = m.dim();
    let rows: Vec<Vec<u64>> = m
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|v| v.to_bits()).collect())
        .collect();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| rows[a].cmp(&rows[b]));
    let mut occurrence = vec![0u64; n];
    for w in 1..n {
        if rows[order[w]] == rows[order[w - 1]] {
            occurrence[order[w]] = occurrence[order[w - 1]] + 1;
        }
    }

    let scales: Vec<f64> = (0..d)
        .map(|c| {
            let sd = order_free_std(m.column(c).to_vec());
            JITTER * if sd > 0.0 { sd } else { 1.0 }
        })
        .collect();

    let mut cols = vec![vec![0.0; n]; d];
    for r in 0..n {
        let row_seed = seed::derive(
            rows[r].iter().fold(0, |h, &b| seed::splitmix64(h ^ b)),
            &[occurrence[r]],
        );
        for c in 0..d {
            let jitter = seed::signed_unit(row_seed ^ (c as u64).wrapping_mul(0x9E37_79B9)) * scales[c];
            cols[c][r] = m[[r, c]] + jitter;
        }
    }
    cols
}

fn order_free_std(mut v: Vec<f64>) -> f64 {
    v.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt()
}
