//! Seeded measurement noise for synthetic data sets.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

fn normal(sigma: f64) -> Result<Normal<f64>> {
    if !(sigma >= 0.0) {
        return Err(Error::Config(format!(
            "noise level must be non-negative, got {sigma}"
        )));
    }
    Normal::new(0.0, sigma).map_err(|e| Error::Config(format!("noise level {sigma}: {e}")))
}

/// `y_i (1 + σ ξ_i)` with ξ standard normal.
pub fn multiplicative_gaussian(values: &[f64], rel_sigma: f64, seed: u64) -> Result<Vec<f64>> {
    let dist = normal(rel_sigma)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(values
        .iter()
        .map(|v| v * (1.0 + dist.sample(&mut rng)))
        .collect())
}

/// `y_i + σ ξ_i` with ξ standard normal.
pub fn additive_gaussian(values: &[f64], sigma: f64, seed: u64) -> Result<Vec<f64>> {
    let dist = normal(sigma)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(values.iter().map(|v| v + dist.sample(&mut rng)).collect())
}
