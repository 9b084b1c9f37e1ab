//! Feature maps for linear-in-features ratio models.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{OpeError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureMap {
    OneHot {
        n_states: usize,
    },
    /// `φ(s) = sqrt(2/D) cos(Ωᵀx_s + b)`, approximating a Gaussian kernel of
    /// the given bandwidth on the state coordinates `x_s`.
    RandomFourier {
        bandwidth: f64,
        seed: u64,
        coords: Vec<Vec<f64>>,
        frequencies: Vec<Vec<f64>>,
        phases: Vec<f64>,
    },
}

impl FeatureMap {
    pub fn one_hot(n_states: usize) -> Self {
        FeatureMap::OneHot { n_states }
    }

    pub fn random_fourier(
        coords: Vec<Vec<f64>>,
        dim: usize,
        bandwidth: f64,
        seed: u64,
    ) -> Result<Self> {
        if dim == 0 || coords.is_empty() {
            return Err(OpeError::InvalidArgument(
                "random Fourier features need states and a positive dimension".into(),
            ));
        }
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(OpeError::InvalidArgument(format!(
                "bandwidth must be positive, got {bandwidth}"
            )));
        }
        let input_dim = coords[0].len();
        if coords.iter().any(|c| c.len() != input_dim) {
            return Err(OpeError::InvalidArgument(
                "state coordinates have different lengths".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0 / bandwidth).expect("positive scale");
        let frequencies = (0..dim)
            .map(|_| (0..input_dim).map(|_| normal.sample(&mut rng)).collect())
            .collect();
        let phases = (0..dim)
            .map(|_| rng.random::<f64>() * 2.0 * std::f64::consts::PI)
            .collect();
        Ok(FeatureMap::RandomFourier {
            bandwidth,
            seed,
            coords,
            frequencies,
            phases,
        })
    }

    pub fn dim(&self) -> usize {
        match self {
            FeatureMap::OneHot { n_states } => *n_states,
            FeatureMap::RandomFourier { phases, .. } => phases.len(),
        }
    }

    pub fn n_states(&self) -> usize {
        match self {
            FeatureMap::OneHot { n_states } => *n_states,
            FeatureMap::RandomFourier { coords, .. } => coords.len(),
        }
    }

    /// Feature vector of state `s`; `s` must be below [`Self::n_states`].
    pub fn features(&self, s: usize) -> Vec<f64> {
        match self {
            FeatureMap::OneHot { n_states } => {
                let mut v = vec![0.0; *n_states];
                v[s] = 1.0;
                v
            }
            FeatureMap::RandomFourier {
                coords,
                frequencies,
                phases,
                ..
            } => {
                let scale = (2.0 / phases.len() as f64).sqrt();
                frequencies
                    .iter()
                    .zip(phases)
                    .map(|(w, b)| {
                        let proj: f64 = w.iter().zip(&coords[s]).map(|(a, x)| a * x).sum();
                        scale * (proj + b).cos()
                    })
                    .collect()
            }
        }
    }

    /// `θᵀφ(s)`.
    pub fn project(&self, theta: &[f64], s: usize) -> f64 {
        match self {
            FeatureMap::OneHot { .. } => theta[s],
            _ => self.features(s).iter().zip(theta).map(|(f, t)| f * t).sum(),
        }
    }

    /// Adds `scale · φ(s)` to `out`.
    pub fn accumulate(&self, s: usize, scale: f64, out: &mut [f64]) {
        match self {
            FeatureMap::OneHot { .. } => out[s] += scale,
            _ => {
                for (o, f) in out.iter_mut().zip(self.features(s)) {
                    *o += scale * f;
                }
            }
        }
    }

    fn check(&self) -> Result<()> {
        if let FeatureMap::RandomFourier {
            coords,
            frequencies,
            phases,
            ..
        } = self
        {
            let input_dim = coords.first().map_or(0, Vec::len);
            if frequencies.len() != phases.len()
                || frequencies.iter().any(|w| w.len() != input_dim)
                || coords.iter().any(|c| c.len() != input_dim)
            {
                return Err(OpeError::Serialization(
                    "inconsistent random Fourier feature shapes".into(),
                ));
            }
        }
        Ok(())
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.dim() == 0 || self.n_states() == 0 {
            return Err(OpeError::InvalidArgument("empty feature map".into()));
        }
        self.check()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_hot_features() {
        let f = FeatureMap::one_hot(4);
        assert_eq!(f.features(2), vec![0.0, 0.0, 1.0, 0.0]);
        assert_eq!(f.project(&[1.0, 2.0, 3.0, 4.0], 3), 4.0);
    }

    #[test]
    fn random_fourier_approximates_gaussian_kernel() {
        let coords = vec![vec![0.0, 0.0], vec![0.5, 0.2], vec![1.0, -1.0]];
        let h = 0.8;
        let f = FeatureMap::random_fourier(coords.clone(), 20_000, h, 3).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let approx: f64 = f
                    .features(i)
                    .iter()
                    .zip(f.features(j))
                    .map(|(a, b)| a * b)
                    .sum();
                let d2: f64 = coords[i]
                    .iter()
                    .zip(&coords[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                let exact = (-d2 / (2.0 * h * h)).exp();
                assert!(
                    (approx - exact).abs() < 0.03,
                    "{i},{j}: {approx} vs {exact}"
                );
            }
        }
    }

    #[test]
    fn random_fourier_is_seeded() {
        let coords = vec![vec![0.0], vec![1.0]];
        let a = FeatureMap::random_fourier(coords.clone(), 8, 1.0, 9).unwrap();
        let b = FeatureMap::random_fourier(coords, 8, 1.0, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.features(1).iter().all(|x| x.is_finite()));
    }
}
