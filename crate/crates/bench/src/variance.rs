//! Closed-form against Monte Carlo variance of the circle importance weights.

use anyhow::{Context, Result};
use ope::oracles::{circle_variance_closed_form, circle_variance_empirical};
use serde::Serialize;

use crate::config::VarianceDemoConfig;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceRow {
    pub rho: f64,
    pub horizon: usize,
    pub replicates: usize,
    pub seed: u64,
    pub a_rho: f64,
    pub d_rho_t: f64,
    pub wis_mse_coeff: f64,
    pub var_weight_closed: f64,
    pub var_weight_empirical: f64,
    pub var_weight_rel_error: f64,
    pub var_wr_closed: f64,
    pub var_wr_empirical: f64,
    pub var_wr_rel_error: f64,
    pub mean_weight: f64,
}

pub const VARIANCE_HEADER: [&str; 14] = [
    "rho",
    "horizon",
    "replicates",
    "seed",
    "a_rho",
    "d_rho_t",
    "wis_mse_coeff",
    "var_weight_closed",
    "var_weight_empirical",
    "var_weight_rel_error",
    "var_wr_closed",
    "var_wr_empirical",
    "var_wr_rel_error",
    "mean_weight",
];

/// `|x − y| / |y|`, or the absolute error when `y = 0`.
pub fn relative_error(x: f64, y: f64) -> f64 {
    if y == 0.0 {
        (x - y).abs()
    } else {
        ((x - y) / y).abs()
    }
}

/// One row per `(ρ, T)` cell in ρ-major order; cell `i` uses seed `seed + i`.
pub fn run_variance_demo(config: &VarianceDemoConfig, seed: u64) -> Result<Vec<VarianceRow>> {
    let mut rows = Vec::new();
    for &rho in &config.rho {
        for &horizon in &config.horizons {
            let cell_seed = seed.wrapping_add(rows.len() as u64);
            let closed = circle_variance_closed_form(rho, horizon)
                .with_context(|| format!("closed form at rho={rho}, T={horizon}"))?;
            let emp = circle_variance_empirical(rho, horizon, config.replicates, cell_seed)
                .with_context(|| format!("sampling at rho={rho}, T={horizon}"))?;
            rows.push(VarianceRow {
                rho,
                horizon,
                replicates: config.replicates,
                seed: cell_seed,
                a_rho: closed.a_rho,
                d_rho_t: closed.d_rho_t,
                wis_mse_coeff: closed.wis_asymptotic_mse_coeff,
                var_weight_closed: closed.var_weight,
                var_weight_empirical: emp.var_weight,
                var_weight_rel_error: relative_error(emp.var_weight, closed.var_weight),
                var_wr_closed: closed.var_weighted_reward,
                var_wr_empirical: emp.var_weighted_reward,
                var_wr_rel_error: relative_error(
                    emp.var_weighted_reward,
                    closed.var_weighted_reward,
                ),
                mean_weight: emp.mean_weight,
            });
        }
    }
    Ok(rows)
}
