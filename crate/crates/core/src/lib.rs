//! Off-policy value estimation for infinite-horizon MDPs.
//!
//! The crate estimates the expected reward of a target policy from
//! trajectories logged under a behavior policy. Besides the classical
//! trajectory-wise and step-wise importance sampling estimators it implements
//! importance weighting on the stationary state distribution: the ratio
//! `w(s) = d_π(s) / d_{π0}(s)` is learned by minimizing a kernel minimax loss
//! over observed transitions, then used as a per-step weight.
//!
//! Modules:
//! - [`mdp`]: tabular MDPs, policies, simulation and exact oracles
//! - [`environments`]: circle MDP, a small gridworld, random MDPs
//! - [`estimators`]: IS/WIS baselines, model-based, stationary-ratio estimator
//! - [`density_ratio`]: kernel loss, exact tabular solver, SGD fitting
//! - [`oracles`]: closed-form variances and Bellman-operator identities

pub mod density_ratio;
pub mod environments;
pub mod error;
pub mod estimators;
pub mod linalg;
pub mod mdp;
pub mod oracles;

pub use error::{OpeError, Result};
pub use mdp::{StochasticPolicy, TabularMdp, Trajectory, TransitionSample};
