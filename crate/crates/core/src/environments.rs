//! Test environments: the circle MDP, a small infinite-horizon taxi-style
//! gridworld, and random ergodic MDPs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{OpeError, Result};
use crate::mdp::{
    check_ergodic, check_irreducible_aperiodic, policy_transition_matrix, StochasticPolicy,
    TabularMdp,
};

/// An MDP with a behavior policy (data generator) and a target policy.
#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    pub mdp: TabularMdp,
    pub behavior: StochasticPolicy,
    pub target: StochasticPolicy,
    /// Optional coordinates per state, used by Gaussian kernels and
    /// random Fourier features.
    pub embedding: Option<Vec<Vec<f64>>>,
}

impl Environment {
    /// Replaces the behavior policy by `(1 − α)·target + α·behavior`.
    pub fn with_mixed_behavior(&self, alpha: f64) -> Result<Self> {
        Ok(Self {
            behavior: self.target.mix(&self.behavior, alpha)?,
            ..self.clone()
        })
    }

    /// Coordinates for every state; one-hot positions when no embedding is set.
    pub fn state_coordinates(&self) -> Vec<Vec<f64>> {
        self.embedding.clone().unwrap_or_else(|| {
            let n = self.mdp.n_states();
            (0..n)
                .map(|s| (0..n).map(|j| if j == s { 1.0 } else { 0.0 }).collect())
                .collect()
        })
    }
}

pub const LEFT: usize = 0;
pub const RIGHT: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CircleSpec {
    /// Number of states; must be odd so both policies are aperiodic.
    pub n: usize,
    /// Probability that the behavior policy moves clockwise (`R`).
    pub rho: f64,
}

/// States `0..n` on a circle; `L` moves to `s − 1`, `R` to `s + 1` (mod n),
/// reward 1 for `R`. Behavior picks `R` with probability `ρ`, target with
/// `1 − ρ`; `d0` is uniform.
pub fn build_circle(spec: CircleSpec) -> Result<Environment> {
    let CircleSpec { n, rho } = spec;
    if n == 0 || n % 2 == 0 {
        return Err(OpeError::InvalidArgument(format!(
            "circle size must be odd, got {n}"
        )));
    }
    if !(rho > 0.0 && rho < 1.0) {
        return Err(OpeError::InvalidArgument(format!(
            "rho {rho} outside (0, 1)"
        )));
    }
    let mut t = vec![0.0; n * 2 * n];
    let mut r = vec![0.0; n * 2];
    for s in 0..n {
        t[(s * 2 + LEFT) * n + (s + n - 1) % n] = 1.0;
        t[(s * 2 + RIGHT) * n + (s + 1) % n] = 1.0;
        r[s * 2 + RIGHT] = 1.0;
    }
    let mdp = TabularMdp::new(n, 2, t, r, vec![1.0 / n as f64; n])?;
    let behavior = StochasticPolicy::from_rows(vec![vec![1.0 - rho, rho]; n])?;
    let target = StochasticPolicy::from_rows(vec![vec![rho, 1.0 - rho]; n])?;
    let embedding = (0..n)
        .map(|s| {
            let angle = 2.0 * std::f64::consts::PI * s as f64 / n as f64;
            vec![angle.cos(), angle.sin()]
        })
        .collect();
    Ok(Environment {
        mdp,
        behavior,
        target,
        embedding: Some(embedding),
    })
}

/// Taxi-style gridworld. Passengers wait at the grid corners; each corner
/// carries one binary flag. Every step each flag is redrawn: present with
/// probability `passenger_rate`, except the flag just picked up, which
/// clears. Actions are N, E, S, W and pick-up.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridworldSpec {
    pub width: usize,
    pub height: usize,
    pub passenger_rate: f64,
    pub pickup_reward: f64,
    pub step_penalty: f64,
    /// Weight of the exploratory policy in the behavior mixture.
    pub alpha: f64,
    /// Breaks ties between equally short routes of the greedy policy.
    pub seed: u64,
    pub max_states: usize,
}

impl Default for GridworldSpec {
    fn default() -> Self {
        Self {
            width: 3,
            height: 3,
            passenger_rate: 0.3,
            pickup_reward: 20.0,
            step_penalty: -1.0,
            alpha: 0.5,
            seed: 0,
            max_states: 512,
        }
    }
}

pub const GRID_ACTIONS: usize = 5;
const PICKUP: usize = 4;

struct Grid {
    width: usize,
    height: usize,
    corners: Vec<(usize, usize)>,
}

impl Grid {
    fn new(width: usize, height: usize) -> Self {
        let mut corners = Vec::new();
        for c in [
            (0, 0),
            (width - 1, 0),
            (0, height - 1),
            (width - 1, height - 1),
        ] {
            if !corners.contains(&c) {
                corners.push(c);
            }
        }
        Self {
            width,
            height,
            corners,
        }
    }

    fn n_flags(&self) -> usize {
        1 << self.corners.len()
    }

    fn n_states(&self) -> usize {
        self.width * self.height * self.n_flags()
    }

    fn encode(&self, x: usize, y: usize, flags: usize) -> usize {
        (y * self.width + x) * self.n_flags() + flags
    }

    fn decode(&self, s: usize) -> (usize, usize, usize) {
        let flags = s % self.n_flags();
        let cell = s / self.n_flags();
        (cell % self.width, cell / self.width, flags)
    }

    fn step(&self, x: usize, y: usize, a: usize) -> (usize, usize) {
        match a {
            0 if y + 1 < self.height => (x, y + 1),
            1 if x + 1 < self.width => (x + 1, y),
            2 if y > 0 => (x, y - 1),
            3 if x > 0 => (x - 1, y),
            _ => (x, y),
        }
    }

    fn corner_at(&self, x: usize, y: usize) -> Option<usize> {
        self.corners.iter().position(|&c| c == (x, y))
    }
}

fn manhattan(a: (usize, usize), b: (usize, usize)) -> usize {
    a.0.abs_diff(b.0) + a.1.abs_diff(b.1)
}

/// Moves that reduce the distance to `goal`, in a seeded preference order.
fn moves_toward(
    grid: &Grid,
    x: usize,
    y: usize,
    goal: (usize, usize),
    order: &[usize],
) -> Vec<usize> {
    let d = manhattan((x, y), goal);
    order
        .iter()
        .copied()
        .filter(|&a| manhattan(grid.step(x, y, a), goal) < d)
        .collect()
}

/// Puts `mass` on the moves toward `goal` (split evenly), or on pick-up at the goal.
fn greedy_row(grid: &Grid, x: usize, y: usize, goal: (usize, usize), order: &[usize]) -> Vec<f64> {
    let mut row = vec![0.0; GRID_ACTIONS];
    if (x, y) == goal {
        row[PICKUP] = 1.0;
    } else {
        let moves = moves_toward(grid, x, y, goal, order);
        for &a in &moves {
            row[a] = 1.0 / moves.len() as f64;
        }
    }
    row
}

fn soften(row: Vec<f64>, eps: f64) -> Vec<f64> {
    row.into_iter()
        .map(|p| (1.0 - eps) * p + eps / GRID_ACTIONS as f64)
        .collect()
}

pub fn build_gridworld(spec: GridworldSpec) -> Result<Environment> {
    if spec.width == 0 || spec.height == 0 {
        return Err(OpeError::InvalidArgument(
            "grid must be at least 1x1".into(),
        ));
    }
    if !(0.0..=1.0).contains(&spec.passenger_rate) {
        return Err(OpeError::InvalidArgument(format!(
            "passenger rate {} outside [0, 1]",
            spec.passenger_rate
        )));
    }
    let grid = Grid::new(spec.width, spec.height);
    let n = grid.n_states();
    if n > spec.max_states {
        return Err(OpeError::InvalidArgument(format!(
            "gridworld needs {n} states, bound is {}",
            spec.max_states
        )));
    }
    let n_corners = grid.corners.len();
    let q = spec.passenger_rate;

    let mut t = vec![0.0; n * GRID_ACTIONS * n];
    let mut r = vec![0.0; n * GRID_ACTIONS];
    for s in 0..n {
        let (x, y, flags) = grid.decode(s);
        for a in 0..GRID_ACTIONS {
            let (nx, ny) = grid.step(x, y, a);
            let picked = if a == PICKUP {
                grid.corner_at(x, y).filter(|&c| flags & (1 << c) != 0)
            } else {
                None
            };
            r[s * GRID_ACTIONS + a] = if picked.is_some() {
                spec.pickup_reward
            } else {
                spec.step_penalty
            };
            for next_flags in 0..grid.n_flags() {
                let mut p = 1.0;
                for c in 0..n_corners {
                    let on = next_flags & (1 << c) != 0;
                    p *= if picked == Some(c) {
                        if on {
                            0.0
                        } else {
                            1.0
                        }
                    } else if on {
                        q
                    } else {
                        1.0 - q
                    };
                }
                if p > 0.0 {
                    t[(s * GRID_ACTIONS + a) * n + grid.encode(nx, ny, next_flags)] += p;
                }
            }
        }
    }

    // taxi uniform over cells, no passengers waiting
    let cells = spec.width * spec.height;
    let mut d0 = vec![0.0; n];
    for cell in 0..cells {
        d0[grid.encode(cell % spec.width, cell / spec.width, 0)] = 1.0 / cells as f64;
    }
    let mdp = TabularMdp::new(n, GRID_ACTIONS, t, r, d0)?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut order = [0usize, 1, 2, 3];
    for i in (1..order.len()).rev() {
        order.swap(i, rng.random_range(0..=i));
    }

    // greedy: nearest waiting passenger, else patrol toward the first corner
    let mut star = Vec::with_capacity(n);
    // exploratory: cycle through corners clockwise regardless of passengers
    let mut plus = Vec::with_capacity(n);
    for s in 0..n {
        let (x, y, flags) = grid.decode(s);
        let waiting: Vec<(usize, usize)> = (0..n_corners)
            .filter(|c| flags & (1 << c) != 0)
            .map(|c| grid.corners[c])
            .collect();
        let goal = waiting
            .iter()
            .copied()
            .min_by_key(|&c| manhattan((x, y), c))
            .unwrap_or(grid.corners[0]);
        star.push(soften(greedy_row(&grid, x, y, goal, &order), 0.1));
        let patrol = match grid.corner_at(x, y) {
            Some(c) => grid.corners[(c + 1) % n_corners],
            None => grid.corners[(x + y) % n_corners],
        };
        plus.push(soften(greedy_row(&grid, x, y, patrol, &order), 0.5));
    }
    let target = StochasticPolicy::from_rows(star)?;
    let exploratory = StochasticPolicy::from_rows(plus)?;
    let behavior = target.mix(&exploratory, spec.alpha)?;

    let embedding = (0..n)
        .map(|s| {
            let (x, y, flags) = grid.decode(s);
            let mut v = vec![x as f64, y as f64];
            v.extend((0..n_corners).map(|c| ((flags >> c) & 1) as f64));
            v
        })
        .collect();
    Ok(Environment {
        mdp,
        behavior,
        target,
        embedding: Some(embedding),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomMdpSpec {
    pub n_states: usize,
    pub n_actions: usize,
    /// Probability that a given next state is in the support of `T(·|s,a)`.
    pub sparsity: f64,
    pub seed: u64,
}

/// Lower bound on every action probability of generated policies.
pub const POLICY_SUPPORT_FLOOR: f64 = 0.01;

const RANDOM_MDP_RETRIES: usize = 1000;

fn dirichlet_row<R: Rng>(len: usize, mask: &[bool], rng: &mut R) -> Vec<f64> {
    let gamma = Gamma::new(1.0, 1.0).expect("unit gamma");
    let mut row: Vec<f64> = (0..len)
        .map(|i| {
            if mask[i] {
                gamma.sample(rng) + 1e-12
            } else {
                0.0
            }
        })
        .collect();
    let total: f64 = row.iter().sum();
    row.iter_mut().for_each(|x| *x /= total);
    row
}

fn random_policy<R: Rng>(
    n_states: usize,
    n_actions: usize,
    rng: &mut R,
) -> Result<StochasticPolicy> {
    let all = vec![true; n_actions];
    let free = 1.0 - POLICY_SUPPORT_FLOOR * n_actions as f64;
    let rows = (0..n_states)
        .map(|_| {
            dirichlet_row(n_actions, &all, rng)
                .into_iter()
                .map(|p| POLICY_SUPPORT_FLOOR + free * p)
                .collect()
        })
        .collect();
    StochasticPolicy::from_rows(rows)
}

/// Random MDP with Dirichlet transition rows restricted to a random support
/// mask. Regenerates until the uniform policy gives an irreducible aperiodic
/// chain.
pub fn build_random(spec: RandomMdpSpec) -> Result<Environment> {
    let RandomMdpSpec {
        n_states: n,
        n_actions: k,
        sparsity,
        seed,
    } = spec;
    if n == 0 || k == 0 {
        return Err(OpeError::InvalidArgument("empty random MDP".into()));
    }
    if !(sparsity > 0.0 && sparsity <= 1.0) {
        return Err(OpeError::InvalidArgument(format!(
            "sparsity {sparsity} outside (0, 1]"
        )));
    }
    if POLICY_SUPPORT_FLOOR * k as f64 > 1.0 {
        return Err(OpeError::InvalidArgument(format!(
            "{k} actions cannot all receive probability {POLICY_SUPPORT_FLOOR}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..RANDOM_MDP_RETRIES {
        let mut t = Vec::with_capacity(n * k * n);
        for _ in 0..n * k {
            let mut mask: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < sparsity).collect();
            if !mask.iter().any(|&m| m) {
                mask[rng.random_range(0..n)] = true;
            }
            t.extend(dirichlet_row(n, &mask, &mut rng));
        }
        let r: Vec<f64> = (0..n * k).map(|_| rng.random::<f64>()).collect();
        let d0 = dirichlet_row(n, &vec![true; n], &mut rng);
        let mdp = TabularMdp::new(n, k, t, r, d0)?;
        let uniform = StochasticPolicy::uniform(n, k);
        if check_irreducible_aperiodic(&policy_transition_matrix(&mdp, &uniform)?).is_err() {
            continue;
        }
        let behavior = random_policy(n, k, &mut rng)?;
        let target = random_policy(n, k, &mut rng)?;
        return Ok(Environment {
            mdp,
            behavior,
            target,
            embedding: None,
        });
    }
    Err(OpeError::GenerationFailed(RANDOM_MDP_RETRIES))
}

/// Checks an environment's policies induce chains with a unique stationary law.
pub fn check_environment(env: &Environment) -> Result<()> {
    check_ergodic(&policy_transition_matrix(&env.mdp, &env.behavior)?)?;
    check_ergodic(&policy_transition_matrix(&env.mdp, &env.target)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{
        expected_reward_exact, finite_horizon_reward, policy_ratio, sample_trajectory,
        stationary_distribution,
    };

    #[test]
    fn circle_ratios() {
        let env = build_circle(CircleSpec { n: 5, rho: 0.4 }).unwrap();
        let b_r = policy_ratio(&env.target, &env.behavior, 2, RIGHT).unwrap();
        let b_l = policy_ratio(&env.target, &env.behavior, 2, LEFT).unwrap();
        assert!((b_r - 1.5).abs() < 1e-15);
        assert!((b_l - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn circle_half_is_on_policy() {
        let env = build_circle(CircleSpec { n: 5, rho: 0.5 }).unwrap();
        assert_eq!(env.behavior, env.target);
    }

    #[test]
    fn circle_stationary_uniform_for_both_policies() {
        let env = build_circle(CircleSpec { n: 7, rho: 0.3 }).unwrap();
        check_environment(&env).unwrap();
        for pi in [&env.behavior, &env.target] {
            let d =
                stationary_distribution(&policy_transition_matrix(&env.mdp, pi).unwrap()).unwrap();
            for x in d {
                assert!((x - 1.0 / 7.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn even_circle_rejected() {
        assert!(build_circle(CircleSpec { n: 6, rho: 0.4 }).is_err());
        assert!(build_circle(CircleSpec { n: 5, rho: 1.0 }).is_err());
    }

    #[test]
    fn circle_forced_right_increments() {
        // ρ = 1 is outside the builder's domain; force it through the policy
        let env = build_circle(CircleSpec { n: 5, rho: 0.4 }).unwrap();
        let always_right = StochasticPolicy::deterministic(2, &[RIGHT; 5]).unwrap();
        let tau = sample_trajectory(&env.mdp, &always_right, 12, 3).unwrap();
        for step in tau.steps() {
            assert_eq!(step.a, RIGHT);
            assert_eq!(step.s_next, (step.s + 1) % 5);
        }
    }

    #[test]
    fn circle_empirical_action_frequency() {
        let env = build_circle(CircleSpec { n: 5, rho: 0.4 }).unwrap();
        let tau = sample_trajectory(&env.mdp, &env.behavior, 10_000, 11).unwrap();
        let freq = tau.steps().iter().filter(|x| x.a == RIGHT).count() as f64 / 10_000.0;
        assert!((freq - 0.4).abs() < 0.02);
    }

    #[test]
    fn gridworld_state_count_by_enumeration() {
        let spec = GridworldSpec::default();
        let env = build_gridworld(spec).unwrap();
        assert_eq!(env.mdp.n_states(), 9 * 16);
        // every state is reachable from d0 under the behavior policy
        let p = policy_transition_matrix(&env.mdp, &env.behavior).unwrap();
        let n = env.mdp.n_states();
        let mut seen = vec![false; n];
        let mut stack: Vec<usize> = (0..n).filter(|&s| env.mdp.initial()[s] > 0.0).collect();
        for &s in &stack {
            seen[s] = true;
        }
        while let Some(u) = stack.pop() {
            for v in 0..n {
                if p[(u, v)] > 0.0 && !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        assert_eq!(seen.iter().filter(|&&x| x).count(), 9 * 16);
        check_environment(&env).unwrap();
    }

    #[test]
    fn gridworld_without_passengers_pays_step_penalty() {
        let env = build_gridworld(GridworldSpec {
            passenger_rate: 0.0,
            step_penalty: -1.0,
            ..GridworldSpec::default()
        })
        .unwrap();
        check_environment(&env).unwrap();
        for pi in [&env.behavior, &env.target] {
            assert!((expected_reward_exact(&env.mdp, pi, 1.0).unwrap() + 1.0).abs() < 1e-10);
            assert!((expected_reward_exact(&env.mdp, pi, 0.9).unwrap() + 1.0).abs() < 1e-10);
            assert!((finite_horizon_reward(&env.mdp, pi, 1.0, 20).unwrap() + 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gridworld_zero_alpha_is_on_policy() {
        let env = build_gridworld(GridworldSpec {
            alpha: 0.0,
            ..GridworldSpec::default()
        })
        .unwrap();
        assert_eq!(env.behavior.probs(), env.target.probs());
    }

    #[test]
    fn gridworld_bound_enforced() {
        let err = build_gridworld(GridworldSpec {
            width: 6,
            height: 6,
            max_states: 512,
            ..GridworldSpec::default()
        })
        .unwrap_err();
        assert!(matches!(err, OpeError::InvalidArgument(_)));
    }

    #[test]
    fn random_mdp_is_deterministic_per_seed() {
        let spec = RandomMdpSpec {
            n_states: 6,
            n_actions: 3,
            sparsity: 0.5,
            seed: 42,
        };
        let a = build_random(spec).unwrap();
        let b = build_random(spec).unwrap();
        assert_eq!(a.mdp.to_json().unwrap(), b.mdp.to_json().unwrap());
        assert_eq!(a.behavior, b.behavior);
    }

    #[test]
    fn dense_random_mdp_has_full_support() {
        let env = build_random(RandomMdpSpec {
            n_states: 5,
            n_actions: 2,
            sparsity: 1.0,
            seed: 1,
        })
        .unwrap();
        assert!(env.mdp.transitions().iter().all(|&p| p > 0.0));
    }

    #[test]
    fn random_policies_respect_support_floor() {
        for seed in 0..20 {
            let env = build_random(RandomMdpSpec {
                n_states: 7,
                n_actions: 4,
                sparsity: 0.4,
                seed,
            })
            .unwrap();
            check_environment(&env).unwrap();
            for pi in [&env.behavior, &env.target] {
                assert!(pi
                    .probs()
                    .iter()
                    .all(|&p| p >= POLICY_SUPPORT_FLOOR - 1e-15));
            }
        }
    }
}
