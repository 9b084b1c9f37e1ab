//! Exact minimization of the population loss over tabular weights.
//!
//! With one-hot weights the aggregated residual is affine, `h = M w + b`, so
//! `D(w) = ‖K^{1/2}(M w + b)‖²`. Minimizing under `Σ_s d_{π0}(s) w(s) = 1` is
//! a least-squares problem on the affine set `w = w_p + N y`, where `N` spans
//! the orthogonal complement of `d_{π0}`.

use nalgebra::{DVector, SymmetricEigen};

use super::kernel::StateKernel;
use super::loss::Population;
use super::model::RatioModel;
use crate::error::{OpeError, Result};
use crate::linalg::Matrix;
use crate::mdp::{StochasticPolicy, TabularMdp};

/// Relative singular-value threshold for rank decisions.
pub const RANK_TOL: f64 = 1e-10;

/// Behavior visitation below this is treated as an unvisited state.
pub const UNVISITED_TOL: f64 = 1e-14;

/// Clip floor relative to the mean weight.
pub const RELATIVE_CLIP_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct TabularSolution {
    pub model: RatioModel,
    /// Population loss of the returned weights.
    pub loss: f64,
    /// Number of coordinates raised to the clip floor.
    pub clipped: usize,
}

/// Orthonormal basis of the complement of `v` (columns), via one Householder
/// reflection.
fn complement_basis(v: &[f64]) -> Matrix {
    let n = v.len();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut u = v.to_vec();
    u[0] += if v[0] >= 0.0 { norm } else { -norm };
    let uu: f64 = u.iter().map(|x| x * x).sum();
    // H = I − 2 u uᵀ / uᵀu maps v to a multiple of e_0; its other columns span v⊥
    Matrix::from_fn(n, n - 1, |i, j| {
        let j = j + 1;
        let id = if i == j { 1.0 } else { 0.0 };
        id - 2.0 * u[i] * u[j] / uu
    })
}

/// Symmetric square root of a PSD kernel matrix.
fn kernel_sqrt(k: &Matrix) -> Matrix {
    let eig = SymmetricEigen::new(k.clone());
    let roots = eig.eigenvalues.map(|x| x.max(0.0).sqrt());
    &eig.eigenvectors * Matrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

fn is_identity(k: &Matrix) -> bool {
    k.iter().enumerate().all(|(idx, x)| {
        let (i, j) = (idx % k.nrows(), idx / k.nrows());
        *x == if i == j { 1.0 } else { 0.0 }
    })
}

/// Minimizes the population loss over tabular `w` with `E_{d_{π0}}[w] = 1`.
pub fn tabular_exact_solve(
    mdp: &TabularMdp,
    behavior: &StochasticPolicy,
    target: &StochasticPolicy,
    gamma: f64,
    kernel: &StateKernel,
) -> Result<TabularSolution> {
    let population = Population::new(mdp, behavior, target, gamma)?;
    solve_population(&population, kernel)
}

pub fn solve_population(population: &Population, kernel: &StateKernel) -> Result<TabularSolution> {
    let n = population.n_states;
    if kernel.n_states() != n {
        return Err(OpeError::DimensionMismatch {
            what: "kernel states vs MDP states",
            expected: n,
            got: kernel.n_states(),
        });
    }
    let d = &population.behavior_visitation;
    let unvisited: Vec<usize> = (0..n).filter(|&s| d[s] <= UNVISITED_TOL).collect();
    if !unvisited.is_empty() {
        return Err(OpeError::UnvisitedStates(unvisited));
    }

    let (m, b) = population.linear_form();
    let (a, c) = if is_identity(kernel.matrix()) {
        (m, DVector::from_vec(b))
    } else {
        let root = kernel_sqrt(kernel.matrix());
        (&root * m, &root * DVector::from_vec(b))
    };

    let dd: f64 = d.iter().map(|x| x * x).sum();
    let w_p = DVector::from_iterator(n, d.iter().map(|x| x / dd));
    let mut w = w_p.clone();
    if n > 1 {
        let basis = complement_basis(d);
        let lhs = &a * &basis;
        let rhs = -(&a * &w_p + &c);
        let svd = lhs.svd(true, true);
        let cutoff = RANK_TOL * svd.singular_values.max().max(f64::MIN_POSITIVE);
        let y = svd
            .solve(&rhs, cutoff)
            .map_err(|e| OpeError::Singular(e.to_string()))?;
        w += basis * y;
    }
    let mut w: Vec<f64> = w.iter().copied().collect();

    let mean = w.iter().sum::<f64>() / n as f64;
    let floor = RELATIVE_CLIP_FLOOR * mean.abs().max(f64::MIN_POSITIVE);
    let mut clipped = 0;
    for x in w.iter_mut() {
        if *x < floor {
            *x = floor;
            clipped += 1;
        }
    }
    if clipped > 0 {
        log::debug!("{clipped} tabular weights clipped to {floor}");
        let z: f64 = w.iter().zip(d).map(|(x, p)| x * p).sum();
        w.iter_mut().for_each(|x| *x /= z);
    }
    let loss = population.loss(&w, kernel)?;
    Ok(TabularSolution {
        model: RatioModel::tabular(w, floor)?,
        loss,
        clipped,
    })
}

/// Orthonormal basis (columns) of the null space of the population map `M`.
pub fn population_null_space(population: &Population) -> Matrix {
    let (m, _) = population.linear_form();
    let n = m.ncols();
    let svd = m.svd(false, true);
    let v_t = svd.v_t.expect("requested V");
    let max = svd.singular_values.max();
    let cutoff = RANK_TOL * max.max(f64::MIN_POSITIVE);
    let cols: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] <= cutoff)
        .collect();
    // thin SVD of a square matrix: every right singular vector is present
    Matrix::from_fn(n, cols.len(), |i, j| v_t[(cols[j], i)])
}
