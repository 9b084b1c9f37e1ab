//! Finite MDPs, stochastic policies, trajectory simulation and the exact
//! quantities (visitation distributions, values, expected rewards) that every
//! estimator is checked against.

mod chain;
mod exact;
mod serialize;

pub use chain::{analyze_chain, check_ergodic, check_irreducible_aperiodic, ChainStructure};
pub use exact::{
    discounted_visitation, expected_reward_exact, finite_horizon_reward, policy_reward,
    policy_transition_matrix, state_marginals, stationary_distribution,
    stationary_distribution_with, value_function, visitation, ValueFunction,
    DENSE_STATIONARY_LIMIT, STATIONARY_TOL,
};
pub use serialize::{MdpFile, PolicyFile};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{OpeError, Result};

/// Tolerance on row sums of stochastic tables.
pub const STOCHASTIC_TOL: f64 = 1e-12;

pub(crate) fn check_distribution(what: impl Fn() -> String, row: &[f64]) -> Result<()> {
    if let Some(bad) = row.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return Err(OpeError::NotStochastic {
            what: what(),
            detail: format!("entry {bad} is negative or not finite"),
        });
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > STOCHASTIC_TOL {
        return Err(OpeError::NotStochastic {
            what: what(),
            detail: format!("sums to {sum}"),
        });
    }
    Ok(())
}

/// Finite state/action MDP with a dense transition tensor `T(s'|s,a)`,
/// expected rewards `r(s,a)` and initial distribution `d0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MdpFile", into = "MdpFile")]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    // index: (s * n_actions + a) * n_states + s'
    transition: Vec<f64>,
    // index: s * n_actions + a
    reward: Vec<f64>,
    initial: Vec<f64>,
}

impl TabularMdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        initial: Vec<f64>,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(OpeError::InvalidArgument(
                "an MDP needs at least one state and one action".into(),
            ));
        }
        let expect = |what, expected, got| {
            if expected == got {
                Ok(())
            } else {
                Err(OpeError::DimensionMismatch {
                    what,
                    expected,
                    got,
                })
            }
        };
        expect(
            "transition tensor",
            n_states * n_actions * n_states,
            transition.len(),
        )?;
        expect("reward table", n_states * n_actions, reward.len())?;
        expect("initial distribution", n_states, initial.len())?;
        for (i, row) in transition.chunks(n_states).enumerate() {
            check_distribution(
                || format!("T(.|s={}, a={})", i / n_actions, i % n_actions),
                row,
            )?;
        }
        if let Some(r) = reward.iter().find(|r| !r.is_finite()) {
            return Err(OpeError::InvalidArgument(format!(
                "reward {r} is not finite"
            )));
        }
        check_distribution(|| "initial distribution".into(), &initial)?;
        Ok(Self {
            n_states,
            n_actions,
            transition,
            reward,
            initial,
        })
    }

    /// Builds an MDP from nested tables `transition[s][a][s']`, `reward[s][a]`.
    pub fn from_tables(
        transition: Vec<Vec<Vec<f64>>>,
        reward: Vec<Vec<f64>>,
        initial: Vec<f64>,
    ) -> Result<Self> {
        let n_states = transition.len();
        let n_actions = transition.first().map_or(0, Vec::len);
        if transition.iter().any(|rows| rows.len() != n_actions)
            || reward.iter().any(|r| r.len() != n_actions)
        {
            return Err(OpeError::InvalidArgument(
                "ragged transition or reward table".into(),
            ));
        }
        let flat_t = transition.into_iter().flatten().flatten().collect();
        let flat_r = reward.into_iter().flatten().collect();
        Self::new(n_states, n_actions, flat_t, flat_r, initial)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn transition(&self, s: usize, a: usize, s_next: usize) -> f64 {
        self.transition[(s * self.n_actions + a) * self.n_states + s_next]
    }

    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    pub fn transitions(&self) -> &[f64] {
        &self.transition
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }

    pub fn rewards(&self) -> &[f64] {
        &self.reward
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn with_initial(&self, initial: Vec<f64>) -> Result<Self> {
        Self::new(
            self.n_states,
            self.n_actions,
            self.transition.clone(),
            self.reward.clone(),
            initial,
        )
    }

    pub fn with_rewards(&self, reward: Vec<f64>) -> Result<Self> {
        Self::new(
            self.n_states,
            self.n_actions,
            self.transition.clone(),
            reward,
            self.initial.clone(),
        )
    }

    /// Relabels states: old state `s` becomes `perm[s]`.
    pub fn permute_states(&self, perm: &[usize]) -> Result<Self> {
        let n = self.n_states;
        if perm.len() != n {
            return Err(OpeError::DimensionMismatch {
                what: "state permutation",
                expected: n,
                got: perm.len(),
            });
        }
        let mut transition = vec![0.0; self.transition.len()];
        let mut reward = vec![0.0; self.reward.len()];
        let mut initial = vec![0.0; n];
        for s in 0..n {
            initial[perm[s]] = self.initial[s];
            for a in 0..self.n_actions {
                reward[perm[s] * self.n_actions + a] = self.reward(s, a);
                for s2 in 0..n {
                    transition[(perm[s] * self.n_actions + a) * n + perm[s2]] =
                        self.transition(s, a, s2);
                }
            }
        }
        Self::new(n, self.n_actions, transition, reward, initial)
    }
}

/// State-conditional action distribution `π(a|s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PolicyFile", into = "PolicyFile")]
pub struct StochasticPolicy {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

impl StochasticPolicy {
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(OpeError::InvalidArgument("empty policy table".into()));
        }
        if probs.len() != n_states * n_actions {
            return Err(OpeError::DimensionMismatch {
                what: "policy table",
                expected: n_states * n_actions,
                got: probs.len(),
            });
        }
        for (s, row) in probs.chunks(n_actions).enumerate() {
            check_distribution(|| format!("pi(.|s={s})"), row)?;
        }
        Ok(Self {
            n_states,
            n_actions,
            probs,
        })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n_states = rows.len();
        let n_actions = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_actions) {
            return Err(OpeError::InvalidArgument("ragged policy table".into()));
        }
        Self::new(n_states, n_actions, rows.into_iter().flatten().collect())
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        let p = 1.0 / n_actions as f64;
        Self {
            n_states,
            n_actions,
            probs: vec![p; n_states * n_actions],
        }
    }

    /// Policy that picks `actions[s]` with probability one.
    pub fn deterministic(n_actions: usize, actions: &[usize]) -> Result<Self> {
        let mut probs = vec![0.0; actions.len() * n_actions];
        for (s, &a) in actions.iter().enumerate() {
            if a >= n_actions {
                return Err(OpeError::InvalidArgument(format!(
                    "action {a} out of range in state {s}"
                )));
            }
            probs[s * n_actions + a] = 1.0;
        }
        Self::new(actions.len(), n_actions, probs)
    }

    /// `(1 - alpha) * self + alpha * other`.
    pub fn mix(&self, other: &Self, alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(OpeError::InvalidArgument(format!(
                "mixing ratio {alpha} outside [0, 1]"
            )));
        }
        if self.n_states != other.n_states || self.n_actions != other.n_actions {
            return Err(OpeError::DimensionMismatch {
                what: "policy mixture",
                expected: self.probs.len(),
                got: other.probs.len(),
            });
        }
        let probs = if alpha == 0.0 {
            self.probs.clone()
        } else if alpha == 1.0 {
            other.probs.clone()
        } else {
            self.probs
                .iter()
                .zip(&other.probs)
                .map(|(p, q)| (1.0 - alpha) * p + alpha * q)
                .collect()
        };
        Self::new(self.n_states, self.n_actions, probs)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.n_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn check_compatible(&self, mdp: &TabularMdp) -> Result<()> {
        if self.n_states != mdp.n_states() {
            return Err(OpeError::DimensionMismatch {
                what: "policy rows vs MDP states",
                expected: mdp.n_states(),
                got: self.n_states,
            });
        }
        if self.n_actions != mdp.n_actions() {
            return Err(OpeError::DimensionMismatch {
                what: "policy columns vs MDP actions",
                expected: mdp.n_actions(),
                got: self.n_actions,
            });
        }
        Ok(())
    }
}

/// Single-step policy ratio `β(a|s) = π(a|s) / π0(a|s)`.
pub fn policy_ratio(
    target: &StochasticPolicy,
    behavior: &StochasticPolicy,
    s: usize,
    a: usize,
) -> Result<f64> {
    let b = behavior.prob(s, a);
    if b <= 0.0 {
        return Err(OpeError::ZeroBehaviorProbability {
            state: s,
            action: a,
        });
    }
    Ok(target.prob(s, a) / b)
}

/// One observed transition `(s, a, s', r)` at time `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionSample {
    pub s: usize,
    pub a: usize,
    pub s_next: usize,
    pub r: f64,
    pub t: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    steps: Vec<TransitionSample>,
}

impl Trajectory {
    /// Checks that time indices count up from zero and consecutive steps chain.
    pub fn new(steps: Vec<TransitionSample>) -> Result<Self> {
        if steps.is_empty() {
            return Err(OpeError::InvalidArgument("empty trajectory".into()));
        }
        for (k, step) in steps.iter().enumerate() {
            if step.t != k {
                return Err(OpeError::InvalidArgument(format!(
                    "step {k} carries time index {}",
                    step.t
                )));
            }
        }
        if let Some(k) = steps.windows(2).position(|w| w[0].s_next != w[1].s) {
            return Err(OpeError::InvalidArgument(format!(
                "step {k} ends in {} but step {} starts in {}",
                steps[k].s_next,
                k + 1,
                steps[k + 1].s
            )));
        }
        Ok(Self { steps })
    }

    pub fn steps(&self) -> &[TransitionSample] {
        &self.steps
    }

    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    pub fn initial_state(&self) -> usize {
        self.steps[0].s
    }

    /// Normalized discounted return `Σ γ^t r_t / Σ γ^t`.
    pub fn normalized_return(&self, gamma: f64) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        let mut g = 1.0;
        for step in &self.steps {
            num += g * step.r;
            den += g;
            g *= gamma;
        }
        num / den
    }
}

fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, p) in probs.iter().enumerate() {
        if *p > 0.0 {
            acc += p;
            last_positive = i;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}

/// Draws one trajectory from an existing RNG stream.
pub fn sample_trajectory_with<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    policy: &StochasticPolicy,
    horizon: usize,
    rng: &mut R,
) -> Result<Trajectory> {
    policy.check_compatible(mdp)?;
    if horizon == 0 {
        return Err(OpeError::InvalidArgument(
            "horizon must be at least 1".into(),
        ));
    }
    let mut steps = Vec::with_capacity(horizon);
    let mut s = sample_categorical(mdp.initial(), rng);
    for t in 0..horizon {
        let a = sample_categorical(policy.row(s), rng);
        let s_next = sample_categorical(mdp.transition_row(s, a), rng);
        steps.push(TransitionSample {
            s,
            a,
            s_next,
            r: mdp.reward(s, a),
            t,
        });
        s = s_next;
    }
    Ok(Trajectory { steps })
}

pub fn sample_trajectory(
    mdp: &TabularMdp,
    policy: &StochasticPolicy,
    horizon: usize,
    seed: u64,
) -> Result<Trajectory> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_trajectory_with(mdp, policy, horizon, &mut rng)
}

/// Draws `n` trajectories from a single seeded stream.
pub fn sample_trajectories(
    mdp: &TabularMdp,
    policy: &StochasticPolicy,
    n: usize,
    horizon: usize,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| sample_trajectory_with(mdp, policy, horizon, &mut rng))
        .collect()
}
