//! Replicated estimator runs over a one-dimensional parameter grid.
//!
//! Replicate `r` at grid index `g` uses seed `base + g·R + r`, so seeds are
//! distinct across the whole sweep.

use anyhow::Result;
use log::{info, warn};
use ope::density_ratio::RatioModel;
use ope::mdp::sample_trajectories;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{apply_sweep, EstimatorKind, ExperimentConfig, SweepVariable};
use crate::env::build_environment;
use crate::pipeline::{exact_ratio, ground_truth, run_estimators, Context};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub sweep_var: &'static str,
    pub sweep_value: f64,
    pub estimator: &'static str,
    pub replicate: usize,
    pub seed: u64,
    /// NaN when the estimator failed.
    pub estimate: f64,
    pub truth: f64,
    pub sq_error: f64,
}

pub const SWEEP_HEADER: [&str; 8] = [
    "sweep_var",
    "sweep_value",
    "estimator",
    "replicate",
    "seed",
    "estimate",
    "truth",
    "sq_error",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub sweep_var: &'static str,
    pub sweep_value: f64,
    pub estimator: &'static str,
    pub replicates: usize,
    pub failures: usize,
    pub truth: f64,
    pub mean_estimate: f64,
    pub mse: f64,
    pub log10_mse: f64,
}

pub const SUMMARY_HEADER: [&str; 9] = [
    "sweep_var",
    "sweep_value",
    "estimator",
    "replicates",
    "failures",
    "truth",
    "mean_estimate",
    "mse",
    "log10_mse",
];

pub fn replicate_seed(base: u64, grid_index: usize, replicates: usize, replicate: usize) -> u64 {
    base.wrapping_add((grid_index * replicates + replicate) as u64)
}

/// Runs the sweep. Rows are ordered by grid point, replicate, then the
/// configured estimator order, independently of scheduling.
pub fn run_sweep(config: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    let model = match &config.ratio.model {
        Some(p) => Some(RatioModel::load(p)?),
        None => None,
    };
    let reps = config.replicates;
    let mut rows = Vec::new();
    for (g, (var, value)) in config.grid().into_iter().enumerate() {
        let mut data = config.data.clone();
        apply_sweep(&mut data, var, value)?;
        let env = build_environment(&config.environment, data.alpha)?;
        let truth = ground_truth(&env, &data)?;
        let exact = if config
            .estimators
            .contains(&EstimatorKind::StationaryRatioExact)
        {
            match exact_ratio(&env, data.gamma) {
                Ok(w) => Some(w),
                Err(e) => {
                    warn!("exact ratio unavailable at {}={value}: {e:#}", var.as_str());
                    None
                }
            }
        } else {
            None
        };
        info!("{}={value}: truth {truth}, {reps} replicates", var.as_str());
        let ctx = Context {
            env: &env,
            data: &data,
            ratio: &config.ratio,
            exact_ratio: exact.as_deref(),
            model: model.as_ref(),
        };
        let point: Vec<Vec<SweepRow>> = (0..reps)
            .into_par_iter()
            .map(|r| {
                let seed = replicate_seed(config.seed, g, reps, r);
                let results = match sample_trajectories(
                    &env.mdp,
                    &env.behavior,
                    data.trajectories,
                    data.horizon,
                    seed,
                ) {
                    Ok(trajs) => run_estimators(&ctx, &trajs, &config.estimators, seed),
                    Err(e) => config
                        .estimators
                        .iter()
                        .map(|&k| (k, Err(anyhow::anyhow!("sampling failed: {e}"))))
                        .collect(),
                };
                results
                    .into_iter()
                    .map(|(kind, report)| {
                        let estimate = match report {
                            Ok(rep) => rep.estimate,
                            Err(e) => {
                                warn!("{kind} failed (seed {seed}): {e:#}");
                                f64::NAN
                            }
                        };
                        SweepRow {
                            sweep_var: var.as_str(),
                            sweep_value: value,
                            estimator: kind.as_str(),
                            replicate: r,
                            seed,
                            estimate,
                            truth,
                            sq_error: (estimate - truth).powi(2),
                        }
                    })
                    .collect()
            })
            .collect();
        rows.extend(point.into_iter().flatten());
    }
    Ok(rows)
}

/// Per grid point and estimator: MSE over the successful replicates.
pub fn summarize(rows: &[SweepRow], estimators: &[EstimatorKind]) -> Vec<SummaryRow> {
    let mut points: Vec<(&'static str, f64)> = Vec::new();
    for r in rows {
        if !points.contains(&(r.sweep_var, r.sweep_value)) {
            points.push((r.sweep_var, r.sweep_value));
        }
    }
    let mut out = Vec::new();
    for (var, value) in points {
        for kind in estimators {
            let group: Vec<&SweepRow> = rows
                .iter()
                .filter(|r| {
                    r.sweep_var == var && r.sweep_value == value && r.estimator == kind.as_str()
                })
                .collect();
            if group.is_empty() {
                continue;
            }
            let ok: Vec<&&SweepRow> = group.iter().filter(|r| r.estimate.is_finite()).collect();
            let n = ok.len() as f64;
            let (mean_estimate, mse) = if ok.is_empty() {
                (f64::NAN, f64::NAN)
            } else {
                (
                    ok.iter().map(|r| r.estimate).sum::<f64>() / n,
                    ok.iter().map(|r| r.sq_error).sum::<f64>() / n,
                )
            };
            out.push(SummaryRow {
                sweep_var: var,
                sweep_value: value,
                estimator: kind.as_str(),
                replicates: ok.len(),
                failures: group.len() - ok.len(),
                truth: group[0].truth,
                mean_estimate,
                mse,
                log10_mse: mse.log10(),
            });
        }
    }
    out
}

/// Looks up the summary log-MSE of one estimator at one grid value.
pub fn log_mse(
    summary: &[SummaryRow],
    var: SweepVariable,
    value: f64,
    kind: EstimatorKind,
) -> Option<f64> {
    summary
        .iter()
        .find(|r| {
            r.sweep_var == var.as_str() && r.sweep_value == value && r.estimator == kind.as_str()
        })
        .map(|r| r.log10_mse)
}
