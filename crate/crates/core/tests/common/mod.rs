#![allow(dead_code)]

use ope::environments::{build_random, Environment, RandomMdpSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_env(n_states: usize, n_actions: usize, seed: u64) -> Environment {
    build_random(RandomMdpSpec {
        n_states,
        n_actions,
        sparsity: 0.6,
        seed,
    })
    .expect("random MDP")
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_vec(rng: &mut impl Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

pub fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// `w / Σ d w`.
pub fn normalize(w: &[f64], d: &[f64]) -> Vec<f64> {
    let z: f64 = w.iter().zip(d).map(|(x, p)| x * p).sum();
    w.iter().map(|x| x / z).collect()
}
