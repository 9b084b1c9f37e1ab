//! Minibatch gradient descent on the normalized kernel loss.
//!
//! Each iteration draws a batch with replacement from a weighted index set,
//! normalizes `w_θ` by its batch mean over transition sources, and takes a
//! gradient step on `(1/B) Σ_{i,j∈batch} Δ_i Δ_j k(s'_i, s'_j)`. In the
//! discounted case the index set is augmented with one dummy transition per
//! trajectory (time −1, landing in the initial state), and indices are drawn
//! with probability proportional to `γ^{t+1}`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use super::features::FeatureMap;
use super::kernel::StateKernel;
use super::loss::{objective_and_gradient, transition_terms, DeltaTerm};
use super::model::{Link, RatioModel};
use crate::error::{OpeError, Result};
use crate::mdp::{StochasticPolicy, TransitionSample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SgdConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Multiplicative step-size decay per iteration.
    pub decay: f64,
    pub iterations: usize,
    pub seed: u64,
    pub link: Link,
    /// Clip floor of the linear link, relative to the mean initial weight.
    pub relative_clip_floor: f64,
    /// Starting parameters; by default the model starts at `w ≡ 1`.
    pub initial_theta: Option<Vec<f64>>,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            learning_rate: 1e-2,
            decay: 0.999,
            iterations: 5000,
            seed: 0,
            link: Link::Exponential,
            relative_clip_floor: 1e-6,
            initial_theta: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SgdFit {
    pub model: RatioModel,
    /// Minibatch objective before each update.
    pub loss_trace: Vec<f64>,
}

/// Parameters with `link(θᵀφ(s)) ≈ 1` on every state.
fn unit_theta(features: &FeatureMap, link: Link) -> Result<Vec<f64>> {
    match (features, link) {
        (_, Link::Exponential) => Ok(vec![0.0; features.dim()]),
        (FeatureMap::OneHot { n_states }, Link::LinearClipped) => Ok(vec![1.0; *n_states]),
        (_, Link::LinearClipped) => {
            let n = features.n_states();
            let phi = nalgebra::DMatrix::from_fn(n, features.dim(), |s, j| features.features(s)[j]);
            let ones = nalgebra::DVector::from_element(n, 1.0);
            let theta = phi
                .svd(true, true)
                .solve(&ones, 1e-12)
                .map_err(|e| OpeError::Singular(e.to_string()))?;
            Ok(theta.iter().copied().collect())
        }
    }
}

fn check_config(config: &SgdConfig) -> Result<()> {
    if config.batch_size == 0 {
        return Err(OpeError::InvalidArgument(
            "batch size must be positive".into(),
        ));
    }
    if !(config.learning_rate > 0.0 && config.learning_rate.is_finite()) {
        return Err(OpeError::InvalidArgument(
            "learning rate must be positive".into(),
        ));
    }
    if !(config.decay > 0.0 && config.decay <= 1.0) {
        return Err(OpeError::InvalidArgument("decay must lie in (0, 1]".into()));
    }
    if !(config.relative_clip_floor > 0.0) {
        return Err(OpeError::InvalidArgument(
            "clip floor must be positive".into(),
        ));
    }
    Ok(())
}

fn initial_model(features: FeatureMap, config: &SgdConfig) -> Result<RatioModel> {
    let theta = match &config.initial_theta {
        Some(t) => t.clone(),
        None => unit_theta(&features, config.link)?,
    };
    let n = features.n_states();
    let mean = (0..n)
        .map(|s| config.link.apply(features.project(&theta, s), 0.0))
        .sum::<f64>()
        / n as f64;
    let floor = config.relative_clip_floor * if mean > 0.0 { mean } else { 1.0 };
    RatioModel::new(features, theta, config.link, floor)
}

/// Runs the optimization loop over an index set with sampling weights.
fn run(
    terms: &[DeltaTerm],
    weights: &[f64],
    features: FeatureMap,
    kernel: &StateKernel,
    config: &SgdConfig,
) -> Result<SgdFit> {
    check_config(config)?;
    if terms.is_empty() {
        return Err(OpeError::InvalidArgument("no samples to fit".into()));
    }
    if features.n_states() != kernel.n_states() {
        return Err(OpeError::DimensionMismatch {
            what: "feature map states vs kernel states",
            expected: kernel.n_states(),
            got: features.n_states(),
        });
    }
    let sampler = WeightedAliasIndex::new(weights.to_vec())
        .map_err(|e| OpeError::InvalidArgument(format!("sampling weights: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = initial_model(features, config)?;
    let mut theta = model.theta().to_vec();
    let batch = config.batch_size;
    let uniform = vec![1.0 / batch as f64; batch];
    let mut batch_terms = Vec::with_capacity(batch);
    let mut trace = Vec::with_capacity(config.iterations);
    let mut step = config.learning_rate;

    for iteration in 0..config.iterations {
        batch_terms.clear();
        batch_terms.extend((0..batch).map(|_| terms[sampler.sample(&mut rng)]));
        // (1/B) Σ_ij is B times the V-statistic with weights 1/B
        let (loss, grad) =
            match objective_and_gradient(&model, &batch_terms, &uniform, kernel, batch as f64) {
                Ok(v) => v,
                // weights under- or overflowed
                Err(OpeError::ZeroWeights) => (f64::NAN, Vec::new()),
                Err(e) => return Err(e),
            };
        trace.push(loss);
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(OpeError::Diverged { iteration, trace });
        }
        for (t, g) in theta.iter_mut().zip(&grad) {
            *t -= step * g;
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(OpeError::Diverged { iteration, trace });
        }
        model.set_theta(&theta);
        step *= config.decay;
    }

    // rescale so the weighted mean over transition sources is one
    let mut num = 0.0;
    let mut den = 0.0;
    for (t, p) in terms.iter().zip(weights) {
        if let DeltaTerm::Transition { s, .. } = *t {
            num += p * model.raw(s);
            den += p;
        }
    }
    model.set_normalization(num / den)?;
    Ok(SgdFit {
        model,
        loss_trace: trace,
    })
}

/// Average-reward case: every observed transition is equally likely.
pub fn sgd_fit_average(
    samples: &[TransitionSample],
    behavior: &StochasticPolicy,
    target: &StochasticPolicy,
    features: FeatureMap,
    kernel: &StateKernel,
    config: &SgdConfig,
) -> Result<SgdFit> {
    let terms = transition_terms(samples, behavior, target)?;
    let weights = vec![1.0; terms.len()];
    run(&terms, &weights, features, kernel, config)
}

/// Discounted case. `initial_states` holds one `s0` per trajectory; each
/// becomes a dummy transition at time −1.
pub fn sgd_fit_discounted(
    samples: &[TransitionSample],
    initial_states: &[usize],
    behavior: &StochasticPolicy,
    target: &StochasticPolicy,
    gamma: f64,
    features: FeatureMap,
    kernel: &StateKernel,
    config: &SgdConfig,
) -> Result<SgdFit> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(OpeError::InvalidArgument(format!(
            "discounted fitting needs gamma in (0, 1), got {gamma}"
        )));
    }
    if initial_states.is_empty() {
        return Err(OpeError::InvalidArgument("no initial states".into()));
    }
    if let Some(&s0) = initial_states.iter().find(|&&s| s >= features.n_states()) {
        return Err(OpeError::InvalidArgument(format!(
            "initial state {s0} out of range"
        )));
    }
    let (terms, weights) = augmented_index(samples, initial_states, behavior, target, gamma)?;
    run(&terms, &weights, features, kernel, config)
}

/// Terms and unnormalized sampling weights `γ^{t+1}` of the augmented data.
pub fn augmented_index(
    samples: &[TransitionSample],
    initial_states: &[usize],
    behavior: &StochasticPolicy,
    target: &StochasticPolicy,
    gamma: f64,
) -> Result<(Vec<DeltaTerm>, Vec<f64>)> {
    let mut terms = transition_terms(samples, behavior, target)?;
    let mut weights: Vec<f64> = samples.iter().map(|x| gamma.powi(x.t as i32 + 1)).collect();
    terms.extend(initial_states.iter().map(|&s0| DeltaTerm::Initial { s0 }));
    weights.extend(std::iter::repeat_n(1.0, initial_states.len()));
    Ok((terms, weights))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environments::{build_circle, CircleSpec};
    use crate::mdp::sample_trajectories;

    #[test]
    fn dummy_mass_matches_one_minus_gamma() {
        let env = build_circle(CircleSpec { n: 5, rho: 0.4 }).unwrap();
        let gamma = 0.9;
        let trajs = sample_trajectories(&env.mdp, &env.behavior, 10, 200, 1).unwrap();
        let samples: Vec<_> = trajs.iter().flat_map(|t| t.steps().to_vec()).collect();
        let s0: Vec<_> = trajs.iter().map(|t| t.initial_state()).collect();
        let (terms, weights) =
            augmented_index(&samples, &s0, &env.behavior, &env.target, gamma).unwrap();
        let total: f64 = weights.iter().sum();
        let dummy: f64 = terms
            .iter()
            .zip(&weights)
            .filter(|(t, _)| matches!(t, DeltaTerm::Initial { .. }))
            .map(|(_, w)| w)
            .sum();
        assert!((dummy / total - (1.0 - gamma)).abs() < 1e-8);
    }

    #[test]
    fn fixed_seed_is_bit_identical() {
        let env = build_circle(CircleSpec { n: 5, rho: 0.4 }).unwrap();
        let trajs = sample_trajectories(&env.mdp, &env.behavior, 5, 50, 2).unwrap();
        let samples: Vec<_> = trajs.iter().flat_map(|t| t.steps().to_vec()).collect();
        let config = SgdConfig {
            iterations: 50,
            batch_size: 32,
            ..SgdConfig::default()
        };
        let fit = || {
            sgd_fit_average(
                &samples,
                &env.behavior,
                &env.target,
                FeatureMap::one_hot(5),
                &StateKernel::delta(5),
                &config,
            )
            .unwrap()
        };
        let (a, b) = (fit(), fit());
        assert_eq!(a.model, b.model);
        assert_eq!(a.loss_trace, b.loss_trace);
    }

    #[test]
    fn divergence_is_reported_with_trace() {
        let env = build_circle(CircleSpec { n: 5, rho: 0.1 }).unwrap();
        let trajs = sample_trajectories(&env.mdp, &env.behavior, 5, 50, 2).unwrap();
        let samples: Vec<_> = trajs.iter().flat_map(|t| t.steps().to_vec()).collect();
        let config = SgdConfig {
            iterations: 200,
            batch_size: 16,
            learning_rate: 1e6,
            decay: 1.0,
            ..SgdConfig::default()
        };
        let err = sgd_fit_average(
            &samples,
            &env.behavior,
            &env.target,
            FeatureMap::one_hot(5),
            &StateKernel::delta(5),
            &config,
        )
        .unwrap_err();
        match err {
            OpeError::Diverged { trace, .. } => assert!(!trace.is_empty()),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_gamma() {
        let env = build_circle(CircleSpec { n: 5, rho: 0.4 }).unwrap();
        let err = sgd_fit_discounted(
            &[],
            &[0],
            &env.behavior,
            &env.target,
            1.0,
            FeatureMap::one_hot(5),
            &StateKernel::delta(5),
            &SgdConfig::default(),
        );
        assert!(err.is_err());
    }
}
