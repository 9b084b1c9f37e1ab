//! Building environments from config.

use anyhow::{Context, Result};
use ope::environments::{build_circle, build_gridworld, build_random, Environment};
use ope::{StochasticPolicy, TabularMdp};

use crate::config::EnvironmentConfig;

/// Builds the environment with the behavior policy mixed toward the target
/// by `alpha` when given.
pub fn build_environment(config: &EnvironmentConfig, alpha: Option<f64>) -> Result<Environment> {
    let env = match config {
        EnvironmentConfig::Circle(spec) => build_circle(*spec)?,
        EnvironmentConfig::Gridworld(spec) => {
            let mut spec = *spec;
            if let Some(a) = alpha {
                spec.alpha = a;
            }
            return Ok(build_gridworld(spec)?);
        }
        EnvironmentConfig::Random(spec) => build_random(*spec)?,
        EnvironmentConfig::File {
            mdp,
            behavior,
            target,
        } => {
            let read_policy = |p: &std::path::Path| -> Result<StochasticPolicy> {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading policy {}", p.display()))?;
                StochasticPolicy::from_json(&text)
                    .with_context(|| format!("parsing policy {}", p.display()))
            };
            let mdp = TabularMdp::load(mdp)?;
            let behavior = read_policy(behavior)?;
            let target = read_policy(target)?;
            behavior.check_compatible(&mdp)?;
            target.check_compatible(&mdp)?;
            Environment {
                mdp,
                behavior,
                target,
                embedding: None,
            }
        }
    };
    match alpha {
        Some(a) => Ok(env.with_mixed_behavior(a)?),
        None => Ok(env),
    }
}
