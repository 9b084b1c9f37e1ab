//! The `fit-ratio` command: fit a density-ratio model and write it out with
//! its loss trace and per-state weights.

use std::path::{Path, PathBuf};

use anyhow::Result;
use ope::mdp::sample_trajectories;
use ope::Trajectory;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::data::{read_trajectories, write_trajectories};
use crate::env::build_environment;
use crate::output::write_csv;
use crate::pipeline::{exact_ratio, fit_ratio, FittedRatio};

#[derive(Debug, Clone, Serialize)]
struct LossRow {
    iteration: usize,
    loss: f64,
}

#[derive(Debug, Clone, Serialize)]
struct WeightRow {
    state: usize,
    weight: f64,
    exact_weight: f64,
}

/// Logged data from `data.path`, or freshly sampled from the behavior policy.
/// The flag says whether the data was sampled.
pub fn load_or_sample(
    config: &ExperimentConfig,
    env: &ope::environments::Environment,
    seed: u64,
) -> Result<(Vec<Trajectory>, bool)> {
    match &config.data.path {
        Some(p) => Ok((read_trajectories(p)?, false)),
        None => Ok((
            sample_trajectories(
                &env.mdp,
                &env.behavior,
                config.data.trajectories,
                config.data.horizon,
                seed,
            )?,
            true,
        )),
    }
}

pub fn run_fit(config: &ExperimentConfig, out_dir: &Path) -> Result<(FittedRatio, Vec<PathBuf>)> {
    let env = build_environment(&config.environment, config.data.alpha)?;
    let (trajs, sampled) = load_or_sample(config, &env, config.seed)?;
    let fitted = fit_ratio(&env, &trajs, config.data.gamma, &config.ratio, config.seed)?;
    std::fs::create_dir_all(out_dir)?;
    let name = &config.name;
    let mut written = Vec::new();

    let model_path = out_dir.join(format!("{name}_ratio.json"));
    fitted.model.save(&model_path)?;
    written.push(model_path);

    let trace: Vec<LossRow> = fitted
        .loss_trace
        .iter()
        .enumerate()
        .map(|(iteration, &loss)| LossRow { iteration, loss })
        .collect();
    let trace_path = out_dir.join(format!("{name}_loss_trace.csv"));
    write_csv(&trace_path, &["iteration", "loss"], &trace)?;
    written.push(trace_path);

    let exact = exact_ratio(&env, config.data.gamma).ok();
    let weights: Vec<WeightRow> = fitted
        .model
        .weights()
        .into_iter()
        .enumerate()
        .map(|(state, weight)| WeightRow {
            state,
            weight,
            exact_weight: exact.as_ref().map_or(f64::NAN, |w| w[state]),
        })
        .collect();
    let weights_path = out_dir.join(format!("{name}_weights.csv"));
    write_csv(
        &weights_path,
        &["state", "weight", "exact_weight"],
        &weights,
    )?;
    written.push(weights_path);

    if sampled {
        let data_path = out_dir.join(format!("{name}_data.csv"));
        write_trajectories(&data_path, &trajs)?;
        written.push(data_path);
    }
    Ok((fitted, written))
}
