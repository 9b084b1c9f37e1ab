//! Off-policy value estimators over batches of behavior trajectories.
//!
//! Every estimator targets the normalized truncated reward
//! `R^T = E[Σ_{t<T} γ^t r_t] / Σ_{t<T} γ^t` of the target policy. Trajectory
//! and prefix importance weights are accumulated in log space, so ratios of
//! order `C^{±T}` neither overflow nor underflow before normalization.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::density_ratio::StateRatio;
use crate::error::{OpeError, Result};
use crate::mdp::{
    finite_horizon_reward, policy_ratio, sample_trajectories, StochasticPolicy, TabularMdp,
    Trajectory,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Divide by the number of trajectories.
    Unnormalized,
    /// Divide by the sum of the weights.
    SelfNormalized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub estimator_name: String,
    pub estimate: f64,
    pub normalization: Option<Normalization>,
    pub diagnostics: BTreeMap<String, f64>,
    pub seed: Option<u64>,
    pub config_hash: Option<String>,
}

impl EstimateReport {
    fn new(name: &str, estimate: f64, normalization: Option<Normalization>) -> Result<Self> {
        if !estimate.is_finite() {
            return Err(OpeError::InvalidArgument(format!(
                "{name} produced a non-finite estimate"
            )));
        }
        Ok(Self {
            estimator_name: name.into(),
            estimate,
            normalization,
            diagnostics: BTreeMap::new(),
            seed: None,
            config_hash: None,
        })
    }

    fn with(mut self, key: &str, value: f64) -> Self {
        self.diagnostics.insert(key.into(), value);
        self
    }

    pub fn with_provenance(mut self, seed: u64, config_hash: impl Into<String>) -> Self {
        self.seed = Some(seed);
        self.config_hash = Some(config_hash.into());
        self
    }

    pub fn diagnostic(&self, key: &str) -> Option<f64> {
        self.diagnostics.get(key).copied()
    }
}

/// Behavior trajectories with the policies and discount they are evaluated
/// under. Construction validates the data once; estimators only read it.
#[derive(Debug, Clone)]
pub struct EstimatorInput<'a> {
    trajectories: &'a [Trajectory],
    behavior: &'a StochasticPolicy,
    target: &'a StochasticPolicy,
    gamma: f64,
    horizon: usize,
    // log β(a_t|s_t) per trajectory and step
    log_beta: Vec<Vec<f64>>,
}

impl<'a> EstimatorInput<'a> {
    pub fn new(
        trajectories: &'a [Trajectory],
        behavior: &'a StochasticPolicy,
        target: &'a StochasticPolicy,
        gamma: f64,
    ) -> Result<Self> {
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(OpeError::InvalidArgument(format!(
                "discount factor {gamma} outside (0, 1]"
            )));
        }
        if trajectories.is_empty() {
            return Err(OpeError::InvalidArgument("no trajectories".into()));
        }
        if behavior.n_states() != target.n_states() || behavior.n_actions() != target.n_actions() {
            return Err(OpeError::DimensionMismatch {
                what: "target vs behavior policy states",
                expected: behavior.n_states(),
                got: target.n_states(),
            });
        }
        let horizon = trajectories[0].horizon();
        let mut log_beta = Vec::with_capacity(trajectories.len());
        for tau in trajectories {
            if tau.horizon() != horizon {
                return Err(OpeError::DimensionMismatch {
                    what: "trajectory horizon",
                    expected: horizon,
                    got: tau.horizon(),
                });
            }
            let mut row = Vec::with_capacity(horizon);
            for x in tau.steps() {
                if x.s >= behavior.n_states()
                    || x.s_next >= behavior.n_states()
                    || x.a >= behavior.n_actions()
                {
                    return Err(OpeError::InvalidArgument(format!(
                        "sample {x:?} outside the policy tables"
                    )));
                }
                row.push(policy_ratio(target, behavior, x.s, x.a)?.ln());
            }
            log_beta.push(row);
        }
        Ok(Self {
            trajectories,
            behavior,
            target,
            gamma,
            horizon,
            log_beta,
        })
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        self.trajectories
    }

    pub fn behavior(&self) -> &StochasticPolicy {
        self.behavior
    }

    pub fn target(&self) -> &StochasticPolicy {
        self.target
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// `γ_t = γ^t / Σ_{k<T} γ^k`.
    pub fn time_weights(&self) -> Vec<f64> {
        let raw: Vec<f64> = (0..self.horizon)
            .map(|t| self.gamma.powi(t as i32))
            .collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|g| g / total).collect()
    }

    /// `log w_{0:t}` for every trajectory and step.
    pub fn log_prefix_weights(&self) -> Vec<Vec<f64>> {
        self.log_beta
            .iter()
            .map(|row| {
                row.iter()
                    .scan(0.0, |acc, lb| {
                        *acc += lb;
                        Some(*acc)
                    })
                    .collect()
            })
            .collect()
    }

    /// `log w_{0:T}` per trajectory.
    pub fn log_trajectory_weights(&self) -> Vec<f64> {
        self.log_beta.iter().map(|row| row.iter().sum()).collect()
    }
}

/// `(Σ w_i x_i, Σ w_i, Σ w_i², max w)` for `w_i = exp(lw_i − shift)`.
struct ShiftedSums {
    shift: f64,
    weighted: f64,
    total: f64,
    squares: f64,
    max: f64,
}

fn shifted_sums(log_w: &[f64], values: &[f64]) -> ShiftedSums {
    let shift = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = ShiftedSums {
        shift,
        weighted: 0.0,
        total: 0.0,
        squares: 0.0,
        max: 0.0,
    };
    if shift == f64::NEG_INFINITY {
        return out;
    }
    for (lw, x) in log_w.iter().zip(values) {
        let w = (lw - shift).exp();
        out.weighted += w * x;
        out.total += w;
        out.squares += w * w;
        out.max = out.max.max(w);
    }
    out
}

fn effective_sample_size(s: &ShiftedSums) -> f64 {
    if s.squares > 0.0 {
        s.total * s.total / s.squares
    } else {
        0.0
    }
}

/// Trajectory-wise IS/WIS: `Σ_i w_{0:T}^i R^i / Z` with `Z = m` or `Σ_i w_{0:T}^i`.
pub fn trajectory_wise(
    input: &EstimatorInput,
    normalization: Normalization,
) -> Result<EstimateReport> {
    let m = input.trajectories.len() as f64;
    let returns: Vec<f64> = input
        .trajectories
        .iter()
        .map(|t| t.normalized_return(input.gamma))
        .collect();
    let log_w = input.log_trajectory_weights();
    let sums = shifted_sums(&log_w, &returns);
    let scale = sums.shift.exp();
    let (estimate, name) = match normalization {
        Normalization::Unnormalized => (scale * sums.weighted / m, "trajectory_is"),
        Normalization::SelfNormalized => {
            if sums.total == 0.0 {
                return Err(OpeError::ZeroWeights);
            }
            (sums.weighted / sums.total, "trajectory_wis")
        }
    };
    let mean_weight = match normalization {
        Normalization::Unnormalized => scale * sums.total / m,
        Normalization::SelfNormalized => 1.0,
    };
    Ok(EstimateReport::new(name, estimate, Some(normalization))?
        .with("ess", effective_sample_size(&sums))
        .with("max_weight", scale * sums.max)
        .with("mean_weight", mean_weight))
}

/// Step-wise IS/WIS: `Σ_t γ_t Σ_i w_{0:t}^i r_t^i / Z_t` with `Z_t = m` or
/// `Σ_i w_{0:t}^i`. The self-normalized form normalizes every time step
/// separately rather than once over all `(i, t)`.
pub fn step_wise(input: &EstimatorInput, normalization: Normalization) -> Result<EstimateReport> {
    let m = input.trajectories.len() as f64;
    let prefix = input.log_prefix_weights();
    let gammas = input.time_weights();
    let mut estimate = 0.0;
    let mut mean_weight = 0.0;
    let mut min_ess = f64::INFINITY;
    let mut max_weight: f64 = 0.0;
    let mut log_w = vec![0.0; prefix.len()];
    let mut rewards = vec![0.0; prefix.len()];
    for t in 0..input.horizon {
        for (i, tau) in input.trajectories.iter().enumerate() {
            log_w[i] = prefix[i][t];
            rewards[i] = tau.steps()[t].r;
        }
        let sums = shifted_sums(&log_w, &rewards);
        let scale = sums.shift.exp();
        match normalization {
            Normalization::Unnormalized => {
                estimate += gammas[t] * scale * sums.weighted / m;
                mean_weight += gammas[t] * scale * sums.total / m;
            }
            Normalization::SelfNormalized => {
                if sums.total == 0.0 {
                    return Err(OpeError::ZeroWeights);
                }
                estimate += gammas[t] * sums.weighted / sums.total;
                mean_weight += gammas[t];
            }
        }
        min_ess = min_ess.min(effective_sample_size(&sums));
        max_weight = max_weight.max(scale * sums.max);
    }
    let name = match normalization {
        Normalization::Unnormalized => "step_is",
        Normalization::SelfNormalized => "step_wis",
    };
    Ok(EstimateReport::new(name, estimate, Some(normalization))?
        .with("ess", min_ess)
        .with("max_weight", max_weight)
        .with("mean_weight", mean_weight))
}

/// Self-normalized estimator with per-step weights `γ^t w(s_t) β(a_t|s_t)`
/// normalized jointly over all trajectories and steps.
pub fn stationary_ratio_estimator<R: StateRatio + ?Sized>(
    input: &EstimatorInput,
    ratio: &R,
) -> Result<EstimateReport> {
    let mut num = 0.0;
    let mut den = 0.0;
    let mut squares = 0.0;
    let mut max_weight: f64 = 0.0;
    for (tau, log_beta) in input.trajectories.iter().zip(&input.log_beta) {
        let mut g = 1.0;
        for (x, lb) in tau.steps().iter().zip(log_beta) {
            let w_s = ratio.ratio(x.s).ok_or_else(|| {
                OpeError::InvalidArgument(format!("ratio undefined at state {}", x.s))
            })?;
            if !(w_s >= 0.0 && w_s.is_finite()) {
                return Err(OpeError::InvalidArgument(format!(
                    "ratio {w_s} at state {} is not a finite nonnegative number",
                    x.s
                )));
            }
            let w = g * w_s * lb.exp();
            num += w * x.r;
            den += w;
            squares += w * w;
            max_weight = max_weight.max(w);
            g *= input.gamma;
        }
    }
    if den == 0.0 {
        return Err(OpeError::ZeroWeights);
    }
    Ok(EstimateReport::new(
        "stationary_ratio",
        num / den,
        Some(Normalization::SelfNormalized),
    )?
    .with("ess", den * den / squares)
    .with("max_weight", max_weight / den)
    .with("mean_weight", 1.0))
}

/// Discounted mean reward of the behavior data without any correction.
pub fn naive_average(input: &EstimatorInput) -> Result<EstimateReport> {
    let m = input.trajectories.len() as f64;
    let estimate = input
        .trajectories
        .iter()
        .map(|t| t.normalized_return(input.gamma))
        .sum::<f64>()
        / m;
    EstimateReport::new("naive_average", estimate, None)
}

/// Maximum-likelihood tabular model from the observed transitions. Pairs
/// never observed get a uniform transition row and zero reward; the initial
/// distribution is the empirical distribution of first states.
pub fn fit_tabular_model(input: &EstimatorInput) -> Result<(TabularMdp, usize)> {
    let n = input.behavior.n_states();
    let k = input.behavior.n_actions();
    let mut counts = vec![0.0; n * k * n];
    let mut visits = vec![0.0; n * k];
    let mut reward_sum = vec![0.0; n * k];
    let mut initial = vec![0.0; n];
    for tau in input.trajectories {
        initial[tau.initial_state()] += 1.0;
        for x in tau.steps() {
            let sa = x.s * k + x.a;
            counts[sa * n + x.s_next] += 1.0;
            visits[sa] += 1.0;
            reward_sum[sa] += x.r;
        }
    }
    let mut unvisited = 0;
    let mut transition = vec![0.0; n * k * n];
    let mut reward = vec![0.0; n * k];
    for sa in 0..n * k {
        let row = &mut transition[sa * n..(sa + 1) * n];
        if visits[sa] == 0.0 {
            unvisited += 1;
            row.fill(1.0 / n as f64);
        } else {
            for (p, c) in row.iter_mut().zip(&counts[sa * n..(sa + 1) * n]) {
                *p = c / visits[sa];
            }
            reward[sa] = reward_sum[sa] / visits[sa];
        }
        // absorb rounding so the row passes the stochasticity check
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|p| *p /= total);
    }
    let m = input.trajectories.len() as f64;
    initial.iter_mut().for_each(|p| *p /= m);
    Ok((
        TabularMdp::new(n, k, transition, reward, initial)?,
        unvisited,
    ))
}

/// Evaluates the target policy exactly on the fitted tabular model over
/// `horizon_for_eval` steps.
pub fn model_based(input: &EstimatorInput, horizon_for_eval: usize) -> Result<EstimateReport> {
    let (model, unvisited) = fit_tabular_model(input)?;
    let estimate = finite_horizon_reward(&model, input.target, input.gamma, horizon_for_eval)?;
    Ok(EstimateReport::new("model_based", estimate, None)?
        .with("unvisited_pairs", unvisited as f64))
}

/// Monte Carlo mean of `R^T` over fresh target-policy trajectories.
pub fn on_policy_oracle(
    mdp: &TabularMdp,
    target: &StochasticPolicy,
    gamma: f64,
    n: usize,
    horizon: usize,
    seed: u64,
) -> Result<EstimateReport> {
    if n == 0 {
        return Err(OpeError::InvalidArgument(
            "need at least one trajectory".into(),
        ));
    }
    let returns: Vec<f64> = sample_trajectories(mdp, target, n, horizon, seed)?
        .iter()
        .map(|t| t.normalized_return(gamma))
        .collect();
    let mean = returns.iter().sum::<f64>() / n as f64;
    let mut report = EstimateReport::new("on_policy_oracle", mean, None)?;
    report.seed = Some(seed);
    if n > 1 {
        let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        report = report.with("std_error", (var / n as f64).sqrt());
    }
    Ok(report)
}
