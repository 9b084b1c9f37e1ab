//! Nonnegative state-weight models `w(s)` and their file format.
//!
//! A saved model looks like
//!
//! ```json
//! {
//!   "format": "ratio-model",
//!   "version": 1,
//!   "features": { "kind": "one_hot", "n_states": 3 },
//!   "theta": [0.0, 0.1, -0.1],
//!   "link": "exponential",
//!   "clip_floor": 1e-6,
//!   "normalization": 1.0033
//! }
//! ```
//!
//! The weight of state `s` is `link(θᵀφ(s)) / normalization`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::features::FeatureMap;
use crate::error::{OpeError, Result};

pub const RATIO_FORMAT: &str = "ratio-model";
pub const RATIO_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    /// `w = max(u, ε)`.
    LinearClipped,
    /// `w = exp(u)`.
    Exponential,
}

impl Link {
    pub fn apply(self, u: f64, clip_floor: f64) -> f64 {
        match self {
            Link::LinearClipped => u.max(clip_floor),
            Link::Exponential => u.exp(),
        }
    }

    /// Derivative of the link at `u`, given `w = apply(u)`.
    pub fn derivative(self, u: f64, w: f64, clip_floor: f64) -> f64 {
        match self {
            Link::LinearClipped => {
                if u > clip_floor {
                    1.0
                } else {
                    0.0
                }
            }
            Link::Exponential => w,
        }
    }
}

/// Anything that assigns a nonnegative weight to a state id.
pub trait StateRatio {
    fn ratio(&self, s: usize) -> Option<f64>;
}

impl StateRatio for [f64] {
    fn ratio(&self, s: usize) -> Option<f64> {
        self.get(s).copied()
    }
}

impl StateRatio for Vec<f64> {
    fn ratio(&self, s: usize) -> Option<f64> {
        self.get(s).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RatioModelFile", into = "RatioModelFile")]
pub struct RatioModel {
    features: FeatureMap,
    theta: Vec<f64>,
    link: Link,
    clip_floor: f64,
    normalization: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RatioModelFile {
    format: String,
    version: u32,
    features: FeatureMap,
    theta: Vec<f64>,
    link: Link,
    clip_floor: f64,
    normalization: f64,
}

impl TryFrom<RatioModelFile> for RatioModel {
    type Error = OpeError;

    fn try_from(f: RatioModelFile) -> Result<Self> {
        if f.format != RATIO_FORMAT || f.version != RATIO_FORMAT_VERSION {
            return Err(OpeError::Serialization(format!(
                "expected {RATIO_FORMAT} version {RATIO_FORMAT_VERSION}, found {} version {}",
                f.format, f.version
            )));
        }
        let mut model = RatioModel::new(f.features, f.theta, f.link, f.clip_floor)?;
        model.set_normalization(f.normalization)?;
        Ok(model)
    }
}

impl From<RatioModel> for RatioModelFile {
    fn from(m: RatioModel) -> Self {
        RatioModelFile {
            format: RATIO_FORMAT.into(),
            version: RATIO_FORMAT_VERSION,
            features: m.features,
            theta: m.theta,
            link: m.link,
            clip_floor: m.clip_floor,
            normalization: m.normalization,
        }
    }
}

impl RatioModel {
    pub fn new(features: FeatureMap, theta: Vec<f64>, link: Link, clip_floor: f64) -> Result<Self> {
        features.validate()?;
        if theta.len() != features.dim() {
            return Err(OpeError::DimensionMismatch {
                what: "ratio parameters vs feature dimension",
                expected: features.dim(),
                got: theta.len(),
            });
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(OpeError::InvalidArgument(
                "non-finite ratio parameter".into(),
            ));
        }
        if !(clip_floor > 0.0 && clip_floor.is_finite()) {
            return Err(OpeError::InvalidArgument(format!(
                "clip floor must be positive, got {clip_floor}"
            )));
        }
        Ok(Self {
            features,
            theta,
            link,
            clip_floor,
            normalization: 1.0,
        })
    }

    /// One-hot, linear-clipped model holding the given table.
    pub fn tabular(weights: Vec<f64>, clip_floor: f64) -> Result<Self> {
        Self::new(
            FeatureMap::one_hot(weights.len()),
            weights,
            Link::LinearClipped,
            clip_floor,
        )
    }

    pub fn features(&self) -> &FeatureMap {
        &self.features
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn link(&self) -> Link {
        self.link
    }

    pub fn clip_floor(&self) -> f64 {
        self.clip_floor
    }

    pub fn normalization(&self) -> f64 {
        self.normalization
    }

    pub fn n_states(&self) -> usize {
        self.features.n_states()
    }

    /// Replaces the parameters; callers guarantee finiteness and length.
    pub(crate) fn set_theta(&mut self, theta: &[f64]) {
        self.theta.copy_from_slice(theta);
    }

    pub fn set_normalization(&mut self, z: f64) -> Result<()> {
        if !(z > 0.0 && z.is_finite()) {
            return Err(OpeError::InvalidArgument(format!(
                "normalization constant must be positive, got {z}"
            )));
        }
        self.normalization = z;
        Ok(())
    }

    /// Unnormalized weight `link(θᵀφ(s))`.
    pub fn raw(&self, s: usize) -> f64 {
        self.link
            .apply(self.features.project(&self.theta, s), self.clip_floor)
    }

    /// Normalized weight `w(s)`.
    pub fn weight(&self, s: usize) -> f64 {
        self.raw(s) / self.normalization
    }

    /// `w(s)` for every state.
    pub fn weights(&self) -> Vec<f64> {
        (0..self.n_states()).map(|s| self.weight(s)).collect()
    }

    /// Rescales so that `Σ_s dist(s) w(s) = 1`.
    pub fn normalize_against(&mut self, dist: &[f64]) -> Result<()> {
        if dist.len() != self.n_states() {
            return Err(OpeError::DimensionMismatch {
                what: "distribution vs ratio model states",
                expected: self.n_states(),
                got: dist.len(),
            });
        }
        let z: f64 = dist.iter().enumerate().map(|(s, p)| p * self.raw(s)).sum();
        self.set_normalization(z)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")
            .map_err(|e| OpeError::Serialization(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| OpeError::Serialization(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

impl StateRatio for RatioModel {
    fn ratio(&self, s: usize) -> Option<f64> {
        (s < self.n_states()).then(|| self.weight(s))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_are_nonnegative_for_both_links() {
        let theta = vec![-3.0, 0.0, 2.0];
        for link in [Link::LinearClipped, Link::Exponential] {
            let m = RatioModel::new(FeatureMap::one_hot(3), theta.clone(), link, 1e-6).unwrap();
            assert!(m.weights().iter().all(|&w| w > 0.0));
        }
        let m = RatioModel::tabular(theta, 1e-6).unwrap();
        assert_eq!(m.weight(0), 1e-6);
    }

    #[test]
    fn normalization_against_distribution() {
        let mut m = RatioModel::tabular(vec![2.0, 4.0], 1e-6).unwrap();
        m.normalize_against(&[0.5, 0.5]).unwrap();
        assert!((m.weight(0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.weight(1) - 4.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn json_round_trip_is_exact() {
        let coords = vec![vec![0.1, 0.2], vec![-0.3, 0.9], vec![1.0 / 3.0, 0.0]];
        let features = FeatureMap::random_fourier(coords, 5, 0.7, 11).unwrap();
        let mut m = RatioModel::new(
            features,
            vec![0.1, -0.2, 1.0 / 7.0, 3.3, 0.0],
            Link::Exponential,
            1e-6,
        )
        .unwrap();
        m.set_normalization(1.2345678901234567).unwrap();
        let back = RatioModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn rejects_wrong_header_and_shape() {
        let m = RatioModel::tabular(vec![1.0, 1.0], 1e-6).unwrap();
        let text = m.to_json().unwrap().replace("ratio-model", "other");
        assert!(RatioModel::from_json(&text).is_err());
        assert!(
            RatioModel::new(FeatureMap::one_hot(3), vec![1.0], Link::Exponential, 1e-6).is_err()
        );
    }
}
