//! Seeded perturbations of primal start points, `chi* + sigma * chi_hat` with
//! `chi_hat` drawn once from a standard normal distribution.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Standard-normal direction with the same shapes as `states`.
pub fn normal_direction(states: &[DVector<f64>], seed: u64) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    states
        .iter()
        .map(|s| DVector::from_fn(s.len(), |_, _| rng.sample::<f64, _>(StandardNormal)))
        .collect()
}

pub fn perturb_states(states: &[DVector<f64>], sigma: f64, seed: u64) -> Vec<DVector<f64>> {
    if sigma == 0.0 {
        return states.to_vec();
    }
    states
        .iter()
        .zip(normal_direction(states, seed))
        .map(|(s, d)| s + d * sigma)
        .collect()
}
