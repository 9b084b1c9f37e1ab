//! Closed-form and brute-force oracles: importance-weight variances on the
//! circle MDP, the Bellman operator `Π` and its inverse, the identities that
//! tie the minimax loss to value functions, and exact expectations of the
//! trajectory-wise, step-wise and stationary-weight estimators.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density_ratio::{ratio_table, Population, StateRatio};
use crate::error::{OpeError, Result};
use crate::linalg::{self, Matrix};
use crate::mdp::{
    finite_horizon_reward, policy_reward, policy_transition_matrix, state_marginals,
    stationary_distribution, value_function, visitation, StochasticPolicy, TabularMdp,
};

/// Closed-form moments of the trajectory-wise weight on the circle MDP for
/// trajectories with `horizon + 1` actions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CircleVarianceReport {
    pub rho: f64,
    pub horizon: usize,
    pub a_rho: f64,
    pub b_rho_t: f64,
    pub d_rho_t: f64,
    /// `Var[w_{0:T}] = A^{T+1} − 1`.
    pub var_weight: f64,
    /// `Var[w_{0:T} R^T] = B A^{T−1} − (1−ρ)²`.
    pub var_weighted_reward: f64,
    /// Leading coefficient `D A^T` of the trajectory-wise WIS MSE in `1/n`.
    pub wis_asymptotic_mse_coeff: f64,
}

fn check_rho(rho: f64) -> Result<()> {
    if rho > 0.0 && rho < 1.0 {
        Ok(())
    } else {
        Err(OpeError::InvalidArgument(format!(
            "rho {rho} outside (0, 1)"
        )))
    }
}

/// Variances of `w_{0:T}` and `w_{0:T} R^T` when behavior picks `R` with
/// probability `ρ` and the target with `1 − ρ`. The count `F` of `R` actions
/// is Binomial(T+1, ρ), `w = C^{2F−(T+1)}` with `C = (1−ρ)/ρ`, `R^T = F/(T+1)`.
///
/// `E[w² R²] = A^{T−1} B` with `B = ρ(1−ρ)/(T+1) + (1−ρ)⁴/ρ²`, from the second
/// derivative of the Binomial moment generating function at `4 log C`.
pub fn circle_variance_closed_form(rho: f64, horizon: usize) -> Result<CircleVarianceReport> {
    check_rho(rho)?;
    if horizon == 0 {
        return Err(OpeError::InvalidArgument(
            "horizon must be at least 1".into(),
        ));
    }
    let q = 1.0 - rho;
    let n = (horizon + 1) as f64;
    let a = (rho.powi(3) + q.powi(3)) / (q * rho);
    let b = q * rho / n + q.powi(4) / (rho * rho);
    let d = b / a - 2.0 * q.powi(3) / rho + q * q * a;
    let t = horizon as i32;
    Ok(CircleVarianceReport {
        rho,
        horizon,
        a_rho: a,
        b_rho_t: b,
        d_rho_t: d,
        var_weight: a.powi(t + 1) - 1.0,
        var_weighted_reward: b * a.powi(t - 1) - q * q,
        wis_asymptotic_mse_coeff: d * a.powi(t),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CircleVarianceSample {
    pub rho: f64,
    pub horizon: usize,
    pub replicates: usize,
    pub mean_weight: f64,
    pub var_weight: f64,
    pub var_weighted_reward: f64,
}

/// Replicates per independent RNG stream in [`circle_variance_empirical`].
pub const VARIANCE_CHUNK: usize = 1 << 16;

/// Mean and sum of squared deviations, merged pairwise (Chan et al.).
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1.0;
        let delta = x - self.mean;
        self.mean += delta / self.n;
        self.m2 += delta * (x - self.mean);
    }

    fn merge(self, other: Self) -> Self {
        if self.n == 0.0 {
            return other;
        }
        if other.n == 0.0 {
            return self;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        Self {
            n,
            mean: self.mean + delta * other.n / n,
            m2: self.m2 + other.m2 + delta * delta * self.n * other.n / n,
        }
    }

    fn variance(&self) -> f64 {
        if self.n > 1.0 {
            self.m2 / (self.n - 1.0)
        } else {
            0.0
        }
    }
}

/// Sample moments of `w_{0:T}` and `w_{0:T} R^T` from Binomial draws of `F`.
/// Replicates are split into chunks of [`VARIANCE_CHUNK`], each with its own
/// ChaCha stream, so the result does not depend on the thread count.
pub fn circle_variance_empirical(
    rho: f64,
    horizon: usize,
    replicates: usize,
    seed: u64,
) -> Result<CircleVarianceSample> {
    check_rho(rho)?;
    if horizon == 0 || replicates == 0 {
        return Err(OpeError::InvalidArgument(
            "horizon and replicates must be positive".into(),
        ));
    }
    let n = horizon as u64 + 1;
    let c = (1.0 - rho) / rho;
    let binomial =
        Binomial::new(n, rho).map_err(|e| OpeError::InvalidArgument(format!("binomial: {e}")))?;
    let chunks = replicates.div_ceil(VARIANCE_CHUNK);
    let parts: Vec<(Moments, Moments)> = (0..chunks)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let count = VARIANCE_CHUNK.min(replicates - k * VARIANCE_CHUNK);
            let mut w_m = Moments::default();
            let mut wr_m = Moments::default();
            for _ in 0..count {
                let f = binomial.sample(&mut rng) as i32;
                let w = c.powi(2 * f - n as i32);
                w_m.push(w);
                wr_m.push(w * f as f64 / n as f64);
            }
            (w_m, wr_m)
        })
        .collect();
    let (w_m, wr_m) = parts.into_iter().fold(
        (Moments::default(), Moments::default()),
        |(a, b), (c, d)| (a.merge(c), b.merge(d)),
    );
    Ok(CircleVarianceSample {
        rho,
        horizon,
        replicates,
        mean_weight: w_m.mean,
        var_weight: w_m.variance(),
        var_weighted_reward: wr_m.variance(),
    })
}

fn check_len(what: &'static str, v: &[f64], n: usize) -> Result<()> {
    if v.len() == n {
        Ok(())
    } else {
        Err(OpeError::DimensionMismatch {
            what,
            expected: n,
            got: v.len(),
        })
    }
}

/// `Πf(s) = f(s) − γ E[f(s') | s]` under the target policy.
pub fn apply_pi(
    f: &[f64],
    mdp: &TabularMdp,
    target: &StochasticPolicy,
    gamma: f64,
) -> Result<Vec<f64>> {
    check_len("test function vs MDP states", f, mdp.n_states())?;
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(OpeError::InvalidArgument(format!(
            "discount factor {gamma} outside (0, 1]"
        )));
    }
    let p = policy_transition_matrix(mdp, target)?;
    let next = linalg::mat_vec(&p, f);
    Ok(f.iter().zip(next).map(|(x, y)| x - gamma * y).collect())
}

/// Solves `Π f = g` for `γ < 1`. For `γ = 1` solves `Π f = g − E_{d_π}[g]`
/// with `E_{d_π}[f] = 0`.
pub fn inverse_bellman(
    g: &[f64],
    mdp: &TabularMdp,
    target: &StochasticPolicy,
    gamma: f64,
) -> Result<Vec<f64>> {
    check_len("function vs MDP states", g, mdp.n_states())?;
    let p = policy_transition_matrix(mdp, target)?;
    let n = mdp.n_states();
    if gamma < 1.0 {
        if !(gamma > 0.0) {
            return Err(OpeError::InvalidArgument(format!(
                "discount factor {gamma} outside (0, 1]"
            )));
        }
        return linalg::solve(Matrix::identity(n, n) - &p * gamma, g);
    }
    if gamma > 1.0 {
        return Err(OpeError::InvalidArgument(format!(
            "discount factor {gamma} outside (0, 1]"
        )));
    }
    let d = stationary_distribution(&p)?;
    let mean = linalg::dot(&d, g);
    let mut a = Matrix::identity(n, n) - &p;
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] += d[j];
        }
    }
    let rhs: Vec<f64> = g.iter().map(|x| x - mean).collect();
    linalg::solve(a, &rhs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BellmanDiagnostics {
    pub f_g: Vec<f64>,
    pub pi_f: Vec<f64>,
    /// `max_s |Π f_g(s) − g(s)|`, with `g` centered when `γ = 1`.
    pub residual: f64,
}

pub fn bellman_diagnostics(
    g: &[f64],
    mdp: &TabularMdp,
    target: &StochasticPolicy,
    gamma: f64,
) -> Result<BellmanDiagnostics> {
    let f_g = inverse_bellman(g, mdp, target, gamma)?;
    let pi_f = apply_pi(&f_g, mdp, target, gamma)?;
    let expected = if gamma < 1.0 {
        g.to_vec()
    } else {
        let d = visitation(mdp, target, 1.0)?;
        let mean = linalg::dot(&d, g);
        g.iter().map(|x| x - mean).collect()
    };
    let residual = linalg::max_abs_diff(&pi_f, &expected);
    Ok(BellmanDiagnostics {
        f_g,
        pi_f,
        residual,
    })
}

/// Weight table rescaled so that `E_{d_{π0}}[w] = 1`.
fn normalized_table<R: StateRatio + ?Sized>(ratio: &R, d_behavior: &[f64]) -> Result<Vec<f64>> {
    let w = ratio_table(ratio, d_behavior.len())?;
    let z = linalg::dot(&w, d_behavior);
    if !(z > 0.0 && z.is_finite()) {
        return Err(OpeError::ZeroWeights);
    }
    Ok(w.into_iter().map(|x| x / z).collect())
}

/// Exact ratio `d_π / d_{π0}`.
pub fn exact_ratio(
    mdp: &TabularMdp,
    behavior: &StochasticPolicy,
    target: &StochasticPolicy,
    gamma: f64,
) -> Result<Vec<f64>> {
    let d_pi = visitation(mdp, target, gamma)?;
    let d_0 = visitation(mdp, behavior, gamma)?;
    let unvisited: Vec<usize> = (0..d_0.len()).filter(|&s| d_0[s] <= 0.0).collect();
    if !unvisited.is_empty() {
        return Err(OpeError::UnvisitedStates(unvisited));
    }
    Ok(d_pi.iter().zip(&d_0).map(|(a, b)| a / b).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentityCheck {
    pub lhs: f64,
    pub rhs: f64,
}

impl IdentityCheck {
    pub fn gap(&self) -> f64 {
        (self.lhs - self.rhs).abs()
    }
}

/// Both sides of `L(w, f) = E_{d_{π0}}[(w* − w) Π f]`, after rescaling `w`
/// to `E_{d_{π0}}[w] = 1`. The left side is the population loss summed over
/// transitions; the right side goes through `Π`.
pub fn check_lemma6<R: StateRatio + ?Sized>(
    ratio: &R,
    f: &[f64],
    mdp: &TabularMdp,
    behavior: &StochasticPolicy,
    target: &StochasticPolicy,
    gamma: f64,
) -> Result<IdentityCheck> {
    let population = Population::new(mdp, behavior, target, gamma)?;
    let d0 = &population.behavior_visitation;
    let w = normalized_table(ratio, d0)?;
    let lhs = population.functional(&w, f)?;
    let w_star = exact_ratio(mdp, behavior, target, gamma)?;
    let pi_f = apply_pi(f, mdp, target, gamma)?;
    let rhs = (0..w.len())
        .map(|s| d0[s] * (w_star[s] - w[s]) * pi_f[s])
        .sum();
    Ok(IdentityCheck { lhs, rhs })
}

/// `L(w, V^π)` against `R_π − R_π[w]` with
/// `R_π[w] = E_{(s,a)∼d_{π0}}[w(s) β(a|s) r(s,a)]`, after rescaling `w`.
/// Discounted values are the unscaled solution of `V = r_π + γ P_π V`.
pub fn check_theorem8<R: StateRatio + ?Sized>(
    ratio: &R,
    mdp: &TabularMdp,
    behavior: &StochasticPolicy,
    target: &StochasticPolicy,
    gamma: f64,
) -> Result<IdentityCheck> {
    let population = Population::new(mdp, behavior, target, gamma)?;
    let d0 = &population.behavior_visitation;
    let w = normalized_table(ratio, d0)?;
    let v = value_function(mdp, target, gamma)?;
    let l_at_v = population.functional(&w, &v.values)?;

    let d_pi = visitation(mdp, target, gamma)?;
    let r_pi: f64 = linalg::dot(&d_pi, &policy_reward(mdp, target)?);
    let mut r_w = 0.0;
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            let b = behavior.prob(s, a);
            if b > 0.0 {
                r_w += d0[s] * b * w[s] * (target.prob(s, a) / b) * mdp.reward(s, a);
            }
        }
    }
    Ok(IdentityCheck {
        lhs: l_at_v,
        rhs: r_pi - r_w,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Theorem7Check {
    /// State attaining `‖d_π − w d_{π0}‖∞`.
    pub state: usize,
    pub sup_norm: f64,
    /// `±f_{s̃}` with `Π f_{s̃} = 1{s = s̃}` (centered when `γ = 1`).
    pub witness: Vec<f64>,
    /// `L(w, witness)`.
    pub loss_at_witness: f64,
}

/// Builds the discriminator that attains `‖d_π − w d_{π0}‖∞` through the
/// minimax loss; `w` is rescaled to `E_{d_{π0}}[w] = 1` first.
pub fn check_theorem7<R: StateRatio + ?Sized>(
    ratio: &R,
    mdp: &TabularMdp,
    behavior: &StochasticPolicy,
    target: &StochasticPolicy,
    gamma: f64,
) -> Result<Theorem7Check> {
    let population = Population::new(mdp, behavior, target, gamma)?;
    let d0 = &population.behavior_visitation;
    let w = normalized_table(ratio, d0)?;
    let d_pi = visitation(mdp, target, gamma)?;
    let gap: Vec<f64> = (0..w.len()).map(|s| d_pi[s] - w[s] * d0[s]).collect();
    let state = (0..gap.len())
        .max_by(|&a, &b| gap[a].abs().total_cmp(&gap[b].abs()))
        .expect("nonempty");
    let mut indicator = vec![0.0; w.len()];
    indicator[state] = 1.0;
    let sign = if gap[state] >= 0.0 { 1.0 } else { -1.0 };
    let witness: Vec<f64> = inverse_bellman(&indicator, mdp, target, gamma)?
        .into_iter()
        .map(|x| sign * x)
        .collect();
    let loss_at_witness = population.functional(&w, &witness)?;
    Ok(Theorem7Check {
        state,
        sup_norm: gap[state].abs(),
        witness,
        loss_at_witness,
    })
}

/// Exact expectations under the behavior policy of the three unbiased
/// estimators of `R^T`, by enumerating every trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RaoBlackwellCheck {
    /// `E[w_{0:T} Σ_t γ_t r_t]`.
    pub trajectory_wise: f64,
    /// `E[Σ_t γ_t w_{0:t} r_t]`.
    pub step_wise: f64,
    /// `E[Σ_t γ_t w_{t:t}(s_t, a_t) r_t]` with
    /// `w_{t:t}(s, a) = d_{π,t}(s) β(a|s) / d_{π0,t}(s)`.
    pub stationary_weight: f64,
    /// `R^T` of the target policy by forward recursion.
    pub truth: f64,
}

/// Trajectories beyond this count are refused by [`rao_blackwell_check`].
pub const ENUMERATION_LIMIT: usize = 10_000_000;

pub fn rao_blackwell_check(
    mdp: &TabularMdp,
    behavior: &StochasticPolicy,
    target: &StochasticPolicy,
    gamma: f64,
    horizon: usize,
) -> Result<RaoBlackwellCheck> {
    behavior.check_compatible(mdp)?;
    target.check_compatible(mdp)?;
    if horizon == 0 {
        return Err(OpeError::InvalidArgument(
            "horizon must be at least 1".into(),
        ));
    }
    let n = mdp.n_states();
    let k = mdp.n_actions();
    let paths = (n * k)
        .checked_pow(horizon as u32)
        .and_then(|x| x.checked_mul(n))
        .filter(|&x| x <= ENUMERATION_LIMIT)
        .ok_or_else(|| OpeError::InvalidArgument("too many trajectories to enumerate".into()))?;
    log::debug!("enumerating up to {paths} trajectories");

    let marg_pi = state_marginals(mdp, target, horizon)?;
    let marg_0 = state_marginals(mdp, behavior, horizon)?;
    let total: f64 = (0..horizon).map(|t| gamma.powi(t as i32)).sum();
    let gammas: Vec<f64> = (0..horizon).map(|t| gamma.powi(t as i32) / total).collect();

    struct Walk<'a> {
        mdp: &'a TabularMdp,
        behavior: &'a StochasticPolicy,
        target: &'a StochasticPolicy,
        gammas: &'a [f64],
        marg_pi: &'a [Vec<f64>],
        marg_0: &'a [Vec<f64>],
        sums: [f64; 3],
    }

    impl Walk<'_> {
        // prob: path probability so far; w: prefix weight; ret, step, stat: partial sums
        #[allow(clippy::too_many_arguments)]
        fn visit(&mut self, t: usize, s: usize, prob: f64, w: f64, ret: f64, step: f64, stat: f64) {
            if t == self.gammas.len() {
                self.sums[0] += prob * w * ret;
                self.sums[1] += prob * step;
                self.sums[2] += prob * stat;
                return;
            }
            for a in 0..self.mdp.n_actions() {
                let b = self.behavior.prob(s, a);
                if b == 0.0 {
                    continue;
                }
                let beta = self.target.prob(s, a) / b;
                let r = self.mdp.reward(s, a);
                let g = self.gammas[t];
                let w_next = w * beta;
                let marginal = self.marg_pi[t][s] / self.marg_0[t][s];
                for s2 in 0..self.mdp.n_states() {
                    let p = self.mdp.transition(s, a, s2);
                    if p == 0.0 {
                        continue;
                    }
                    self.visit(
                        t + 1,
                        s2,
                        prob * b * p,
                        w_next,
                        ret + g * r,
                        step + g * w_next * r,
                        stat + g * marginal * beta * r,
                    );
                }
            }
        }
    }

    let mut walk = Walk {
        mdp,
        behavior,
        target,
        gammas: &gammas,
        marg_pi: &marg_pi,
        marg_0: &marg_0,
        sums: [0.0; 3],
    };
    for s0 in 0..n {
        let p0 = mdp.initial()[s0];
        if p0 > 0.0 {
            walk.visit(0, s0, p0, 1.0, 0.0, 0.0, 0.0);
        }
    }
    Ok(RaoBlackwellCheck {
        trajectory_wise: walk.sums[0],
        step_wise: walk.sums[1],
        stationary_weight: walk.sums[2],
        truth: finite_horizon_reward(mdp, target, gamma, horizon)?,
    })
}
