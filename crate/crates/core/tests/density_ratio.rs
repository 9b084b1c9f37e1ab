mod common;

use common::{normalize, random_env, rng, sup_diff, uniform_vec};
use ope::density_ratio::{
    normalized_rkhs_loss, objective_and_gradient, population_null_space, rkhs_loss,
    sgd_fit_average, sgd_fit_discounted, tabular_exact_solve, DeltaTerm, FeatureMap, Kernel, Link,
    Population, RatioModel, SgdConfig, StateKernel,
};
use ope::environments::{build_circle, CircleSpec};
use ope::mdp::{sample_trajectories, visitation};
use ope::oracles::exact_ratio;
use ope::TransitionSample;
use proptest::prelude::*;
use rand::Rng;

fn gaussian_kernel(n: usize, seed: u64) -> StateKernel {
    let mut r = rng(seed);
    let coords: Vec<Vec<f64>> = (0..n).map(|_| uniform_vec(&mut r, 2, -1.0, 1.0)).collect();
    StateKernel::new(Kernel::gaussian(0.8).unwrap(), &coords).unwrap()
}

fn samples_of(
    env: &ope::environments::Environment,
    n: usize,
    horizon: usize,
    seed: u64,
) -> Vec<TransitionSample> {
    sample_trajectories(&env.mdp, &env.behavior, n, horizon, seed)
        .unwrap()
        .iter()
        .flat_map(|t| t.steps().to_vec())
        .collect()
}

#[test]
fn three_handcrafted_samples_with_gaussian_kernel() {
    // w ≡ 1 and β = 2, 0, 3 give Δ = 1, −1, 2 anchored at states 1, 2, 3
    let w = [1.0; 4];
    let terms = [
        DeltaTerm::Transition {
            s: 0,
            beta: 2.0,
            s_next: 1,
        },
        DeltaTerm::Transition {
            s: 0,
            beta: 0.0,
            s_next: 2,
        },
        DeltaTerm::Transition {
            s: 0,
            beta: 3.0,
            s_next: 3,
        },
    ];
    let coords = vec![vec![-5.0], vec![0.0], vec![1.0], vec![3.0]];
    let kernel = StateKernel::new(Kernel::gaussian(1.0).unwrap(), &coords).unwrap();
    let probs = [1.0 / 3.0; 3];
    let by_hand =
        (6.0 - 2.0 * (-0.5f64).exp() + 4.0 * (-4.5f64).exp() - 4.0 * (-2.0f64).exp()) / 9.0;
    let loss = rkhs_loss(&w, &terms, &probs, &kernel).unwrap();
    assert!((loss - by_hand).abs() < 1e-15, "{loss} vs {by_hand}");
}

#[test]
fn exact_ratio_has_zero_population_loss() {
    for seed in 0..10 {
        let env = random_env(5, 2, seed);
        for gamma in [1.0, 0.9] {
            let w = exact_ratio(&env.mdp, &env.behavior, &env.target, gamma).unwrap();
            let pop = Population::new(&env.mdp, &env.behavior, &env.target, gamma).unwrap();
            for kernel in [StateKernel::delta(5), gaussian_kernel(5, seed)] {
                assert!(pop.loss(&w, &kernel).unwrap() <= 1e-18);
            }
        }
    }
}

#[test]
fn average_case_null_space_is_spanned_by_exact_ratio() {
    for seed in 0..15 {
        let env = random_env(6, 3, seed);
        let pop = Population::new(&env.mdp, &env.behavior, &env.target, 1.0).unwrap();
        let null = population_null_space(&pop);
        assert_eq!(null.ncols(), 1, "seed {seed}");
        let v: Vec<f64> = null.column(0).iter().copied().collect();
        let d = &pop.behavior_visitation;
        let w = exact_ratio(&env.mdp, &env.behavior, &env.target, 1.0).unwrap();
        assert!(sup_diff(&normalize(&v, d), &w) < 1e-9);
    }
}

#[test]
fn tabular_solver_recovers_discounted_ratio() {
    let env = random_env(8, 3, 42);
    let sol = tabular_exact_solve(
        &env.mdp,
        &env.behavior,
        &env.target,
        0.9,
        &StateKernel::delta(8),
    )
    .unwrap();
    let d_pi = visitation(&env.mdp, &env.target, 0.9).unwrap();
    let d_0 = visitation(&env.mdp, &env.behavior, 0.9).unwrap();
    let expected: Vec<f64> = d_pi.iter().zip(&d_0).map(|(a, b)| a / b).collect();
    assert_eq!(sol.clipped, 0);
    assert!(sup_diff(&sol.model.weights(), &expected) <= 1e-8);
}

#[test]
fn on_policy_ratio_is_one() {
    let env = random_env(5, 2, 9);
    for gamma in [1.0, 0.8] {
        let sol = tabular_exact_solve(
            &env.mdp,
            &env.behavior,
            &env.behavior,
            gamma,
            &gaussian_kernel(5, 1),
        )
        .unwrap();
        assert!(sol.model.weights().iter().all(|w| (w - 1.0).abs() <= 1e-8));
    }
}

fn fd_relative_error(
    model: &RatioModel,
    terms: &[DeltaTerm],
    probs: &[f64],
    kernel: &StateKernel,
) -> f64 {
    let (_, grad) = objective_and_gradient(model, terms, probs, kernel, 1.0).unwrap();
    let h = 1e-5;
    let theta = model.theta().to_vec();
    let mut diff = 0.0;
    let mut norm = 0.0;
    for j in 0..theta.len() {
        let eval = |delta: f64| {
            let mut t = theta.clone();
            t[j] += delta;
            let m = RatioModel::new(
                model.features().clone(),
                t,
                model.link(),
                model.clip_floor(),
            )
            .unwrap();
            objective_and_gradient(&m, terms, probs, kernel, 1.0)
                .unwrap()
                .0
        };
        let fd = (eval(h) - eval(-h)) / (2.0 * h);
        diff += (fd - grad[j]).powi(2);
        norm += grad[j].powi(2);
    }
    diff.sqrt() / norm.sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn loss_is_nonnegative(seed in 0u64..500, gamma in prop_oneof![Just(1.0), 0.3f64..0.99]) {
        let env = random_env(5, 2, seed);
        let mut r = rng(seed);
        let w = uniform_vec(&mut r, 5, 0.0, 3.0);
        let pop = Population::new(&env.mdp, &env.behavior, &env.target, gamma).unwrap();
        prop_assert!(pop.loss(&w, &gaussian_kernel(5, seed)).unwrap() >= 0.0);
    }

    #[test]
    fn normalized_loss_is_scale_invariant(seed in 0u64..500) {
        let env = random_env(5, 2, seed);
        let mut r = rng(seed + 1);
        let w = uniform_vec(&mut r, 5, 0.1, 3.0);
        let pop = Population::new(&env.mdp, &env.behavior, &env.target, 1.0).unwrap();
        let kernel = gaussian_kernel(5, seed);
        let base = normalized_rkhs_loss(&w, &pop.terms, &pop.probs, &kernel).unwrap();
        for c in [0.1, 10.0] {
            let scaled: Vec<f64> = w.iter().map(|x| c * x).collect();
            let other = normalized_rkhs_loss(&scaled, &pop.terms, &pop.probs, &kernel).unwrap();
            prop_assert!((base - other).abs() <= 1e-12 * base.max(1e-12), "{base} vs {other}");
        }
    }

    #[test]
    fn delta_kernel_loss_groups_by_next_state(seed in 0u64..500, m in 1usize..60) {
        let env = random_env(6, 2, seed);
        let samples = samples_of(&env, 1, m, seed);
        let mut r = rng(seed);
        let w = uniform_vec(&mut r, 6, 0.0, 2.0);
        let raw = uniform_vec(&mut r, m, 0.0, 1.0);
        let total: f64 = raw.iter().sum();
        let probs: Vec<f64> = raw.iter().map(|x| x / total).collect();
        let terms = ope::density_ratio::transition_terms(&samples, &env.behavior, &env.target).unwrap();
        let loss = rkhs_loss(&w, &terms, &probs, &StateKernel::delta(6)).unwrap();
        let grouped: f64 = (0..6)
            .map(|s2| {
                samples
                    .iter()
                    .zip(&terms)
                    .zip(&probs)
                    .filter(|((x, _), _)| x.s_next == s2)
                    .map(|((_, t), p)| p * t.value(&w))
                    .sum::<f64>()
                    .powi(2)
            })
            .sum();
        prop_assert!((loss - grouped).abs() <= 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences(seed in 0u64..500, exponential in any::<bool>(), fourier in any::<bool>()) {
        let n = 6;
        let env = random_env(n, 2, seed);
        let mut r = rng(seed);
        let samples = samples_of(&env, 4, 16, seed);
        let mut terms = ope::density_ratio::transition_terms(&samples, &env.behavior, &env.target).unwrap();
        terms.push(DeltaTerm::Initial { s0: r.random_range(0..n) });
        let probs = vec![1.0 / terms.len() as f64; terms.len()];
        let (features, link) = match (fourier, exponential) {
            (true, _) => {
                let coords: Vec<Vec<f64>> = (0..n).map(|_| uniform_vec(&mut r, 2, -1.0, 1.0)).collect();
                (FeatureMap::random_fourier(coords, 8, 0.7, seed).unwrap(), Link::Exponential)
            }
            (false, true) => (FeatureMap::one_hot(n), Link::Exponential),
            // keep pre-activations away from the clip kink
            (false, false) => (FeatureMap::one_hot(n), Link::LinearClipped),
        };
        let theta = match link {
            Link::Exponential => uniform_vec(&mut r, features.dim(), -0.5, 0.5),
            Link::LinearClipped => uniform_vec(&mut r, features.dim(), 0.3, 2.0),
        };
        let model = RatioModel::new(features, theta, link, 1e-6).unwrap();
        let err = fd_relative_error(&model, &terms, &probs, &gaussian_kernel(n, seed));
        prop_assert!(err <= 1e-4, "relative error {err}");
    }
}

#[test]
fn exact_solution_is_a_stationary_point() {
    for seed in 0..5 {
        let env = random_env(5, 2, seed);
        let pop = Population::new(&env.mdp, &env.behavior, &env.target, 1.0).unwrap();
        let kernel = gaussian_kernel(5, seed);
        let sol = tabular_exact_solve(&env.mdp, &env.behavior, &env.target, 1.0, &kernel).unwrap();
        let w = sol.model.weights();
        let models = [
            RatioModel::tabular(w.clone(), 1e-6).unwrap(),
            RatioModel::new(
                FeatureMap::one_hot(5),
                w.iter().map(|x| x.ln()).collect(),
                Link::Exponential,
                1e-6,
            )
            .unwrap(),
        ];
        for model in &models {
            let (_, grad) =
                objective_and_gradient(model, &pop.terms, &pop.probs, &kernel, 1.0).unwrap();
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            assert!(norm <= 1e-6, "seed {seed}: {norm}");
        }
    }
}

#[test]
fn sgd_recovers_unit_ratio_on_circle() {
    let env = build_circle(CircleSpec { n: 7, rho: 0.4 }).unwrap();
    let samples = samples_of(&env, 20, 200, 5);
    let config = SgdConfig {
        iterations: 2000,
        ..SgdConfig::default()
    };
    let fit = sgd_fit_average(
        &samples,
        &env.behavior,
        &env.target,
        FeatureMap::one_hot(7),
        &StateKernel::delta(7),
        &config,
    )
    .unwrap();
    let w = fit.model.weights();
    assert!(w.iter().all(|x| (x - 1.0).abs() <= 0.05), "{w:?}");
    assert_eq!(fit.loss_trace.len(), 2000);
}

#[test]
fn sgd_recovers_discounted_ratio() {
    let env = random_env(6, 2, 11);
    let gamma = 0.8;
    let trajs = sample_trajectories(&env.mdp, &env.behavior, 500, 50, 3).unwrap();
    let samples: Vec<_> = trajs.iter().flat_map(|t| t.steps().to_vec()).collect();
    let s0: Vec<_> = trajs.iter().map(|t| t.initial_state()).collect();
    // the V-statistic diagonal adds E[Δ²]/B to the objective; B = 256 shifts
    // the minimizer by about 0.13 here
    let config = SgdConfig {
        batch_size: 1024,
        ..SgdConfig::default()
    };
    let fit = sgd_fit_discounted(
        &samples,
        &s0,
        &env.behavior,
        &env.target,
        gamma,
        FeatureMap::one_hot(6),
        &StateKernel::delta(6),
        &config,
    )
    .unwrap();
    let exact = exact_ratio(&env.mdp, &env.behavior, &env.target, gamma).unwrap();
    let err = sup_diff(&fit.model.weights(), &exact);
    assert!(
        err <= 0.1,
        "sup error {err}: {:?} vs {exact:?}",
        fit.model.weights()
    );
}
