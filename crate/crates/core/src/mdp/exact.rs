//! Exact population quantities of a policy on a tabular MDP.

use super::chain::check_ergodic;
use super::{StochasticPolicy, TabularMdp};
use crate::error::{OpeError, Result};
use crate::linalg::{self, Matrix};

/// Default residual tolerance for stationary distributions.
pub const STATIONARY_TOL: f64 = 1e-12;

/// Above this many states the stationary distribution uses power iteration.
pub const DENSE_STATIONARY_LIMIT: usize = 2000;

const POWER_ITERATION_CAP: usize = 1_000_000;

pub(crate) fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma <= 1.0 {
        Ok(())
    } else {
        Err(OpeError::InvalidArgument(format!(
            "discount factor {gamma} outside (0, 1]"
        )))
    }
}

/// `P_π(s'|s) = Σ_a T(s'|s,a) π(a|s)`.
pub fn policy_transition_matrix(mdp: &TabularMdp, policy: &StochasticPolicy) -> Result<Matrix> {
    policy.check_compatible(mdp)?;
    let n = mdp.n_states();
    let mut p = Matrix::zeros(n, n);
    for s in 0..n {
        for a in 0..mdp.n_actions() {
            let pa = policy.prob(s, a);
            if pa == 0.0 {
                continue;
            }
            for (s2, t) in mdp.transition_row(s, a).iter().enumerate() {
                p[(s, s2)] += pa * t;
            }
        }
    }
    Ok(p)
}

/// Expected one-step reward `r_π(s) = Σ_a π(a|s) r(s,a)`.
pub fn policy_reward(mdp: &TabularMdp, policy: &StochasticPolicy) -> Result<Vec<f64>> {
    policy.check_compatible(mdp)?;
    Ok((0..mdp.n_states())
        .map(|s| {
            (0..mdp.n_actions())
                .map(|a| policy.prob(s, a) * mdp.reward(s, a))
                .sum()
        })
        .collect())
}

fn stationary_residual(p: &Matrix, d: &[f64]) -> f64 {
    let next = linalg::vec_mat(d, p);
    linalg::max_abs_diff(&next, d)
}

fn dense_stationary(p: &Matrix) -> Result<Vec<f64>> {
    let n = p.nrows();
    // (Pᵀ - I) d = 0 with the last equation replaced by Σ d = 1.
    let mut a = p.transpose() - Matrix::identity(n, n);
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut b = vec![0.0; n];
    b[n - 1] = 1.0;
    linalg::solve(a, &b)
}

fn power_stationary(p: &Matrix, tol: f64) -> Result<Vec<f64>> {
    let n = p.nrows();
    let mut d = vec![1.0 / n as f64; n];
    for _ in 0..POWER_ITERATION_CAP {
        let next = linalg::vec_mat(&d, p);
        let change = linalg::max_abs_diff(&next, &d);
        d = next;
        if change <= tol {
            return Ok(d);
        }
    }
    Err(OpeError::NotErgodic(format!(
        "power iteration did not reach {tol} within {POWER_ITERATION_CAP} steps"
    )))
}

/// Stationary distribution of an ergodic row-stochastic matrix with the
/// default tolerance.
pub fn stationary_distribution(p: &Matrix) -> Result<Vec<f64>> {
    stationary_distribution_with(p, STATIONARY_TOL)
}

/// Returns `d` with `‖dᵀP − dᵀ‖∞ ≤ tol` and `Σ d = 1`.
pub fn stationary_distribution_with(p: &Matrix, tol: f64) -> Result<Vec<f64>> {
    if p.nrows() != p.ncols() || p.nrows() == 0 {
        return Err(OpeError::InvalidArgument(
            "transition matrix must be square".into(),
        ));
    }
    for i in 0..p.nrows() {
        let row: Vec<f64> = p.row(i).iter().copied().collect();
        super::check_distribution(|| format!("row {i} of P"), &row)?;
    }
    check_ergodic(p)?;
    let mut d = if p.nrows() <= DENSE_STATIONARY_LIMIT {
        dense_stationary(p)?
    } else {
        power_stationary(p, tol)?
    };
    // round-off can leave tiny negatives on transient states
    for x in d.iter_mut() {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
    let total: f64 = d.iter().sum();
    d.iter_mut().for_each(|x| *x /= total);
    let residual = stationary_residual(p, &d);
    if residual > tol {
        return Err(OpeError::Singular(format!(
            "stationary residual {residual:e} exceeds tolerance {tol:e}"
        )));
    }
    Ok(d)
}

/// Normalized discounted visitation `(1−γ) d0ᵀ (I − γ P)^{-1}`.
pub fn discounted_visitation(p: &Matrix, d0: &[f64], gamma: f64) -> Result<Vec<f64>> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(OpeError::InvalidArgument(format!(
            "discounted visitation needs gamma in (0, 1), got {gamma}"
        )));
    }
    let n = p.nrows();
    if d0.len() != n {
        return Err(OpeError::DimensionMismatch {
            what: "initial distribution",
            expected: n,
            got: d0.len(),
        });
    }
    let a = Matrix::identity(n, n) - p.transpose() * gamma;
    let b: Vec<f64> = d0.iter().map(|x| (1.0 - gamma) * x).collect();
    let mut d = linalg::solve(a, &b)?;
    let total: f64 = d.iter().sum();
    d.iter_mut().for_each(|x| *x /= total);
    // γ Pᵀd − d + (1−γ) d0 = 0
    let pd = linalg::vec_mat(&d, p);
    let residual = (0..n)
        .map(|i| (gamma * pd[i] - d[i] + (1.0 - gamma) * d0[i]).abs())
        .fold(0.0, f64::max);
    if residual > 1e-10 {
        return Err(OpeError::Singular(format!(
            "visitation residual {residual:e} exceeds 1e-10"
        )));
    }
    Ok(d)
}

/// Average visitation distribution of `policy`: discounted from `d0` when
/// `γ < 1`, stationary when `γ = 1`.
pub fn visitation(mdp: &TabularMdp, policy: &StochasticPolicy, gamma: f64) -> Result<Vec<f64>> {
    check_gamma(gamma)?;
    let p = policy_transition_matrix(mdp, policy)?;
    if gamma < 1.0 {
        discounted_visitation(&p, mdp.initial(), gamma)
    } else {
        stationary_distribution(&p)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueFunction {
    pub values: Vec<f64>,
    /// `R_π` in the average-reward case; `None` when discounted.
    pub average_reward: Option<f64>,
}

/// Solves the Bellman equation. Discounted values are not scaled by
/// `(1−γ)`; average-reward values are pinned by `E_{d_π}[V] = 0`.
pub fn value_function(
    mdp: &TabularMdp,
    policy: &StochasticPolicy,
    gamma: f64,
) -> Result<ValueFunction> {
    check_gamma(gamma)?;
    let p = policy_transition_matrix(mdp, policy)?;
    let r = policy_reward(mdp, policy)?;
    let n = mdp.n_states();
    if gamma < 1.0 {
        let a = Matrix::identity(n, n) - &p * gamma;
        let values = linalg::solve(a, &r)?;
        return Ok(ValueFunction {
            values,
            average_reward: None,
        });
    }
    let d = stationary_distribution(&p)?;
    let avg = linalg::dot(&d, &r);
    // (I − P + 1 dᵀ) V = r − R is nonsingular for a unichain and forces dᵀV = 0.
    let mut a = Matrix::identity(n, n) - &p;
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] += d[j];
        }
    }
    let rhs: Vec<f64> = r.iter().map(|x| x - avg).collect();
    let values = linalg::solve(a, &rhs)?;
    Ok(ValueFunction {
        values,
        average_reward: Some(avg),
    })
}

/// `R_π = Σ_{s,a} d_π(s) π(a|s) r(s,a)`.
pub fn expected_reward_exact(
    mdp: &TabularMdp,
    policy: &StochasticPolicy,
    gamma: f64,
) -> Result<f64> {
    let d = visitation(mdp, policy, gamma)?;
    let r = policy_reward(mdp, policy)?;
    Ok(linalg::dot(&d, &r))
}

/// State marginals `d_{π,t}` for `t = 0..horizon`, starting from `d0`.
pub fn state_marginals(
    mdp: &TabularMdp,
    policy: &StochasticPolicy,
    horizon: usize,
) -> Result<Vec<Vec<f64>>> {
    let p = policy_transition_matrix(mdp, policy)?;
    let mut out = Vec::with_capacity(horizon);
    let mut d = mdp.initial().to_vec();
    for _ in 0..horizon {
        let next = linalg::vec_mat(&d, &p);
        out.push(d);
        d = next;
    }
    Ok(out)
}

/// Expected truncated reward `E[Σ_{t<T} γ^t r_t] / Σ_{t<T} γ^t` under `policy`.
pub fn finite_horizon_reward(
    mdp: &TabularMdp,
    policy: &StochasticPolicy,
    gamma: f64,
    horizon: usize,
) -> Result<f64> {
    check_gamma(gamma)?;
    if horizon == 0 {
        return Err(OpeError::InvalidArgument(
            "horizon must be at least 1".into(),
        ));
    }
    let r = policy_reward(mdp, policy)?;
    let marginals = state_marginals(mdp, policy, horizon)?;
    let mut num = 0.0;
    let mut den = 0.0;
    let mut g = 1.0;
    for d in &marginals {
        num += g * linalg::dot(d, &r);
        den += g;
        g *= gamma;
    }
    Ok(num / den)
}
