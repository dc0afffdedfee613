//! Seeded Gaussian random projection.

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::seed;

/// `input_dim x target_dim` matrix of `N(0, 1) / sqrt(target_dim)` entries,
/// fixed by `(seed, input_dim, target_dim)`.
pub fn projection_matrix(input_dim: usize, target_dim: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(
        seed,
        &[input_dim as u64, target_dim as u64],
    ));
    let scale = 1.0 / (target_dim as f64).sqrt();
    Array2::from_shape_simple_fn((input_dim, target_dim), || {
        let z: f64 = StandardNormal.sample(&mut rng);
        z * scale
    })
}

pub fn random_projection(x: ArrayView2<'_, f64>, target_dim: usize, seed: u64) -> Result<Array2<f64>> {
    let dim = x.ncols();
    if target_dim == 0 || target_dim > dim {
        return Err(Error::Parameter(format!(
            "projection width must be in 1..={dim}, got {target_dim}"
        )));
    }
    Ok(x.dot(&projection_matrix(dim, target_dim, seed)))
}
