//! The `eval` command: every configured estimator on one dataset.

use std::path::Path;

use anyhow::Result;
use ope::density_ratio::RatioModel;
use serde::Serialize;

use crate::config::{EstimatorKind, ExperimentConfig};
use crate::env::build_environment;
use crate::fit::load_or_sample;
use crate::pipeline::{exact_ratio, ground_truth, run_estimators, Context};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateRow {
    pub estimator: &'static str,
    /// NaN when the estimator failed.
    pub estimate: f64,
    pub truth: f64,
    pub abs_error: f64,
    pub seed: u64,
    pub config_hash: String,
    /// `ok` or the error message.
    pub status: String,
}

pub const ESTIMATE_HEADER: [&str; 7] = [
    "estimator",
    "estimate",
    "truth",
    "abs_error",
    "seed",
    "config_hash",
    "status",
];

pub fn run_eval(config: &ExperimentConfig, data_dir: Option<&Path>) -> Result<Vec<EstimateRow>> {
    let env = build_environment(&config.environment, config.data.alpha)?;
    let mut config = config.clone();
    if let (None, Some(dir)) = (&config.data.path, data_dir) {
        let p = dir.join(format!("{}_data.csv", config.name));
        if p.exists() {
            config.data.path = Some(p);
        }
    }
    let (trajs, _) = load_or_sample(&config, &env, config.seed)?;
    let mut data = config.data.clone();
    // Truth and model-based evaluation follow the logged horizon.
    data.horizon = trajs
        .iter()
        .map(|t| t.horizon())
        .max()
        .unwrap_or(data.horizon);
    let truth = ground_truth(&env, &data)?;
    let model = match &config.ratio.model {
        Some(p) => Some(RatioModel::load(p)?),
        None => None,
    };
    let exact = if config
        .estimators
        .contains(&EstimatorKind::StationaryRatioExact)
    {
        exact_ratio(&env, data.gamma).ok()
    } else {
        None
    };
    let ctx = Context {
        env: &env,
        data: &data,
        ratio: &config.ratio,
        exact_ratio: exact.as_deref(),
        model: model.as_ref(),
    };
    let hash = config.hash();
    Ok(
        run_estimators(&ctx, &trajs, &config.estimators, config.seed)
            .into_iter()
            .map(|(kind, report)| {
                let (estimate, status) = match report {
                    Ok(r) => (r.estimate, "ok".to_string()),
                    Err(e) => (f64::NAN, format!("{e:#}")),
                };
                EstimateRow {
                    estimator: kind.as_str(),
                    estimate,
                    truth,
                    abs_error: (estimate - truth).abs(),
                    seed: config.seed,
                    config_hash: hash.clone(),
                    status,
                }
            })
            .collect(),
    )
}
