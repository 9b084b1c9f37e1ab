//! Data generation, ratio fitting and estimator dispatch shared by the
//! subcommands.

use anyhow::{anyhow, Result};
use ope::density_ratio::{
    resolve_bandwidth, sgd_fit_average, sgd_fit_discounted, tabular_exact_solve, FeatureMap,
    Kernel, KernelSpec, RatioModel, SgdConfig, StateKernel,
};
use ope::environments::Environment;
use ope::estimators::{
    model_based, naive_average, on_policy_oracle, stationary_ratio_estimator, step_wise,
    trajectory_wise, EstimateReport, EstimatorInput, Normalization,
};
use ope::mdp::finite_horizon_reward;
use ope::oracles;
use ope::{Trajectory, TransitionSample};

use crate::config::{DataConfig, EstimatorKind, FeatureConfig, RatioConfig, RatioMethod};

/// Analytic `R^T` of the target policy.
pub fn ground_truth(env: &Environment, data: &DataConfig) -> Result<f64> {
    Ok(finite_horizon_reward(
        &env.mdp,
        &env.target,
        data.gamma,
        data.horizon,
    )?)
}

pub fn transitions(trajectories: &[Trajectory]) -> Vec<TransitionSample> {
    trajectories
        .iter()
        .flat_map(|t| t.steps().iter().copied())
        .collect()
}

/// State kernel for `spec`, resolving a median-heuristic bandwidth from the
/// observed next states.
pub fn state_kernel(
    env: &Environment,
    samples: &[TransitionSample],
    spec: &KernelSpec,
    seed: u64,
) -> Result<StateKernel> {
    let coords = env.state_coordinates();
    Ok(match resolve_bandwidth(samples, &coords, spec, seed)? {
        Kernel::Delta => StateKernel::delta(env.mdp.n_states()),
        k => StateKernel::new(k, &coords)?,
    })
}

/// Exact ratio `d_π / d_{π0}` from the environment's visitation distributions.
pub fn exact_ratio(env: &Environment, gamma: f64) -> Result<Vec<f64>> {
    Ok(oracles::exact_ratio(
        &env.mdp,
        &env.behavior,
        &env.target,
        gamma,
    )?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedRatio {
    pub model: RatioModel,
    pub loss_trace: Vec<f64>,
}

pub fn fit_ratio(
    env: &Environment,
    trajectories: &[Trajectory],
    gamma: f64,
    config: &RatioConfig,
    seed: u64,
) -> Result<FittedRatio> {
    let samples = transitions(trajectories);
    let kernel = state_kernel(env, &samples, &config.kernel, seed)?;
    match config.method {
        RatioMethod::Exact => {
            let sol = tabular_exact_solve(&env.mdp, &env.behavior, &env.target, gamma, &kernel)?;
            Ok(FittedRatio {
                model: sol.model,
                loss_trace: vec![sol.loss],
            })
        }
        RatioMethod::Sgd => {
            let n = env.mdp.n_states();
            let features = match config.features {
                FeatureConfig::OneHot => FeatureMap::one_hot(n),
                FeatureConfig::RandomFourier { dim, bandwidth } => {
                    let coords = env.state_coordinates();
                    let h = match bandwidth {
                        Some(h) => h,
                        None => match resolve_bandwidth(
                            &samples,
                            &coords,
                            &KernelSpec::gaussian_median(),
                            seed,
                        )? {
                            Kernel::Gaussian { bandwidth } => bandwidth,
                            Kernel::Delta => unreachable!("median rule gives a Gaussian"),
                        },
                    };
                    FeatureMap::random_fourier(coords, dim, h, seed)?
                }
            };
            let sgd = SgdConfig {
                seed,
                ..config.sgd.clone()
            };
            let fit = if gamma < 1.0 {
                let s0: Vec<usize> = trajectories.iter().map(|t| t.initial_state()).collect();
                sgd_fit_discounted(
                    &samples,
                    &s0,
                    &env.behavior,
                    &env.target,
                    gamma,
                    features,
                    &kernel,
                    &sgd,
                )?
            } else {
                sgd_fit_average(
                    &samples,
                    &env.behavior,
                    &env.target,
                    features,
                    &kernel,
                    &sgd,
                )?
            };
            Ok(FittedRatio {
                model: fit.model,
                loss_trace: fit.loss_trace,
            })
        }
    }
}

/// Everything an estimator may need beyond the data.
pub struct Context<'a> {
    pub env: &'a Environment,
    pub data: &'a DataConfig,
    pub ratio: &'a RatioConfig,
    /// Exact ratio, required by `stationary_ratio_exact`.
    pub exact_ratio: Option<&'a [f64]>,
    /// Pre-fitted model for `stationary_ratio`; fitted per call otherwise.
    pub model: Option<&'a RatioModel>,
}

/// Runs every estimator on one dataset. Failures are returned per estimator.
pub fn run_estimators(
    ctx: &Context,
    trajectories: &[Trajectory],
    estimators: &[EstimatorKind],
    seed: u64,
) -> Vec<(EstimatorKind, Result<EstimateReport>)> {
    let input = match EstimatorInput::new(
        trajectories,
        &ctx.env.behavior,
        &ctx.env.target,
        ctx.data.gamma,
    ) {
        Ok(input) => input,
        Err(e) => {
            return estimators
                .iter()
                .map(|&k| (k, Err(anyhow!("invalid estimator input: {e}"))))
                .collect()
        }
    };
    let mut fitted: Option<Result<RatioModel>> = None;
    estimators
        .iter()
        .map(|&kind| {
            let report = match kind {
                EstimatorKind::TrajectoryIs => {
                    trajectory_wise(&input, Normalization::Unnormalized).map_err(Into::into)
                }
                EstimatorKind::TrajectoryWis => {
                    trajectory_wise(&input, Normalization::SelfNormalized).map_err(Into::into)
                }
                EstimatorKind::StepIs => {
                    step_wise(&input, Normalization::Unnormalized).map_err(Into::into)
                }
                EstimatorKind::StepWis => {
                    step_wise(&input, Normalization::SelfNormalized).map_err(Into::into)
                }
                EstimatorKind::StationaryRatio => {
                    let model = match ctx.model {
                        Some(m) => Ok(m),
                        None => fitted
                            .get_or_insert_with(|| {
                                fit_ratio(ctx.env, trajectories, ctx.data.gamma, ctx.ratio, seed)
                                    .map(|f| f.model)
                            })
                            .as_ref()
                            .map_err(|e| anyhow!("ratio fit failed: {e:#}")),
                    };
                    model.and_then(|m| Ok(stationary_ratio_estimator(&input, m)?))
                }
                EstimatorKind::StationaryRatioExact => match ctx.exact_ratio {
                    Some(w) => stationary_ratio_estimator(&input, w)
                        .map(|mut r| {
                            r.estimator_name = kind.as_str().into();
                            r
                        })
                        .map_err(Into::into),
                    None => Err(anyhow!("exact ratio unavailable")),
                },
                EstimatorKind::NaiveAverage => naive_average(&input).map_err(Into::into),
                EstimatorKind::ModelBased => {
                    model_based(&input, ctx.data.horizon).map_err(Into::into)
                }
                EstimatorKind::OnPolicyOracle => on_policy_oracle(
                    &ctx.env.mdp,
                    &ctx.env.target,
                    ctx.data.gamma,
                    ctx.data.trajectories,
                    ctx.data.horizon,
                    seed,
                )
                .map_err(Into::into),
            };
            (kind, report)
        })
        .collect()
}
