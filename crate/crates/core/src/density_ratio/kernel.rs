//! Kernels on states and the median bandwidth heuristic.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{OpeError, Result};
use crate::linalg::Matrix;
use crate::mdp::TransitionSample;

/// Pairs beyond this many points are subsampled before taking the median.
pub const MEDIAN_SUBSAMPLE: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Delta,
    GaussianRbf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Bandwidth {
    Fixed(f64),
    Named(BandwidthRule),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthRule {
    MedianHeuristic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    /// Ignored by the delta kernel; defaults to the median heuristic.
    #[serde(default = "median_rule")]
    pub bandwidth: Bandwidth,
}

fn median_rule() -> Bandwidth {
    Bandwidth::Named(BandwidthRule::MedianHeuristic)
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self::delta()
    }
}

impl KernelSpec {
    pub fn delta() -> Self {
        Self {
            kind: KernelKind::Delta,
            bandwidth: Bandwidth::Fixed(1.0),
        }
    }

    pub fn gaussian(bandwidth: f64) -> Self {
        Self {
            kind: KernelKind::GaussianRbf,
            bandwidth: Bandwidth::Fixed(bandwidth),
        }
    }

    pub fn gaussian_median() -> Self {
        Self {
            kind: KernelKind::GaussianRbf,
            bandwidth: Bandwidth::Named(BandwidthRule::MedianHeuristic),
        }
    }
}

/// A kernel with its bandwidth resolved.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kernel {
    Delta,
    Gaussian { bandwidth: f64 },
}

impl Kernel {
    pub fn gaussian(bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(OpeError::InvalidArgument(format!(
                "bandwidth must be positive, got {bandwidth}"
            )));
        }
        Ok(Kernel::Gaussian { bandwidth })
    }

    /// `k(x, y)` for the Gaussian kernel `exp(−‖x−y‖² / (2h²))`; the delta
    /// kernel compares coordinates for equality.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            Kernel::Delta => {
                if x == y {
                    1.0
                } else {
                    0.0
                }
            }
            Kernel::Gaussian { bandwidth } => {
                (-squared_distance(x, y) / (2.0 * bandwidth * bandwidth)).exp()
            }
        }
    }
}

fn squared_distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Kernel Gram matrix between the states of a tabular problem.
#[derive(Debug, Clone, PartialEq)]
pub struct StateKernel {
    kernel: Kernel,
    matrix: Matrix,
}

impl StateKernel {
    /// Delta kernel on state ids.
    pub fn delta(n_states: usize) -> Self {
        Self {
            kernel: Kernel::Delta,
            matrix: Matrix::identity(n_states, n_states),
        }
    }

    /// Gram matrix over `coords[s]`. The delta kernel ignores coordinates and
    /// compares state ids.
    pub fn new(kernel: Kernel, coords: &[Vec<f64>]) -> Result<Self> {
        let n = coords.len();
        if n == 0 {
            return Err(OpeError::InvalidArgument("no states".into()));
        }
        if let Kernel::Gaussian { bandwidth } = kernel {
            Kernel::gaussian(bandwidth)?;
        } else {
            return Ok(Self::delta(n));
        }
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                (0..n)
                    .map(|j| kernel.eval(&coords[i], &coords[j]))
                    .collect()
            })
            .collect();
        Ok(Self {
            kernel,
            matrix: Matrix::from_fn(n, n, |i, j| rows[i][j]),
        })
    }

    pub fn kernel(&self) -> Kernel {
        self.kernel
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn n_states(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn get(&self, s: usize, s2: usize) -> f64 {
        self.matrix[(s, s2)]
    }
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Median of all pairwise Euclidean distances, over at most
/// [`MEDIAN_SUBSAMPLE`] points drawn without replacement. If more than half
/// the pairs coincide, the median of the positive distances is used; if all
/// points coincide the result falls back to 1.
pub fn median_pairwise_distance(points: &[Vec<f64>], seed: u64) -> f64 {
    let chosen: Vec<&Vec<f64>> = if points.len() > MEDIAN_SUBSAMPLE {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        sample(&mut rng, points.len(), MEDIAN_SUBSAMPLE)
            .into_iter()
            .map(|i| &points[i])
            .collect()
    } else {
        points.iter().collect()
    };
    let mut dists: Vec<f64> = (0..chosen.len())
        .into_par_iter()
        .flat_map_iter(|i| {
            let chosen = &chosen;
            (i + 1..chosen.len()).map(move |j| squared_distance(chosen[i], chosen[j]).sqrt())
        })
        .collect();
    dists.sort_by(f64::total_cmp);
    if dists.is_empty() {
        log::warn!("fewer than two points for the median heuristic; using bandwidth 1");
        return 1.0;
    }
    let m = median(&dists);
    if m > 0.0 {
        return m;
    }
    let first_positive = dists.partition_point(|&d| d <= 0.0);
    if first_positive == dists.len() {
        log::warn!("all points coincide; using bandwidth 1");
        return 1.0;
    }
    median(&dists[first_positive..])
}

/// Resolves the bandwidth of `spec` from the next-state coordinates of the
/// observed transitions.
pub fn resolve_bandwidth(
    samples: &[TransitionSample],
    coords: &[Vec<f64>],
    spec: &KernelSpec,
    seed: u64,
) -> Result<Kernel> {
    match (spec.kind, spec.bandwidth) {
        (KernelKind::Delta, _) => Ok(Kernel::Delta),
        (KernelKind::GaussianRbf, Bandwidth::Fixed(h)) => Kernel::gaussian(h),
        (KernelKind::GaussianRbf, Bandwidth::Named(BandwidthRule::MedianHeuristic)) => {
            if samples.is_empty() {
                return Err(OpeError::InvalidArgument(
                    "median heuristic needs at least one sample".into(),
                ));
            }
            let mut points = Vec::with_capacity(samples.len());
            for x in samples {
                let c = coords.get(x.s_next).ok_or(OpeError::DimensionMismatch {
                    what: "state coordinates",
                    expected: x.s_next + 1,
                    got: coords.len(),
                })?;
                points.push(c.clone());
            }
            Kernel::gaussian(median_pairwise_distance(&points, seed))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_points() {
        assert_eq!(median_pairwise_distance(&[vec![0.0], vec![4.0]], 0), 4.0);
    }

    #[test]
    fn three_collinear_points() {
        let pts = [vec![0.0, 0.0], vec![1.0, 0.0], vec![2.0, 0.0]];
        assert_eq!(median_pairwise_distance(&pts, 0), 1.0);
    }

    #[test]
    fn identical_points_fall_back() {
        let pts = vec![vec![3.0, 1.0]; 5];
        assert_eq!(median_pairwise_distance(&pts, 0), 1.0);
    }

    #[test]
    fn subsampling_is_seeded() {
        let pts: Vec<Vec<f64>> = (0..2500).map(|i| vec![(i * 7 % 101) as f64]).collect();
        assert_eq!(
            median_pairwise_distance(&pts, 5),
            median_pairwise_distance(&pts, 5)
        );
    }

    #[test]
    fn gaussian_matrix_is_symmetric_unit_diagonal() {
        let coords = vec![vec![0.0], vec![1.0], vec![3.0]];
        let k = StateKernel::new(Kernel::gaussian(1.5).unwrap(), &coords).unwrap();
        for i in 0..3 {
            assert_eq!(k.get(i, i), 1.0);
            for j in 0..3 {
                assert_eq!(k.get(i, j), k.get(j, i));
            }
        }
        assert!((k.get(0, 2) - (-9.0f64 / 4.5).exp()).abs() < 1e-15);
    }

    #[test]
    fn bad_bandwidth_rejected() {
        assert!(Kernel::gaussian(0.0).is_err());
        assert!(Kernel::gaussian(-1.0).is_err());
    }

    #[test]
    fn spec_round_trips_through_json() {
        for spec in [
            KernelSpec::delta(),
            KernelSpec::gaussian(0.7),
            KernelSpec::gaussian_median(),
        ] {
            let text = serde_json::to_string(&spec).unwrap();
            assert_eq!(serde_json::from_str::<KernelSpec>(&text).unwrap(), spec);
        }
        let parsed: KernelSpec =
            serde_json::from_str(r#"{"kind":"gaussian_rbf","bandwidth":"median_heuristic"}"#)
                .unwrap();
        assert_eq!(parsed, KernelSpec::gaussian_median());
    }
}
