mod common;

use common::{random_env, rng, uniform_vec};
use ope::linalg::{mat_vec, vec_mat};
use ope::mdp::{
    discounted_visitation, expected_reward_exact, policy_transition_matrix, sample_trajectory,
    stationary_distribution, visitation,
};
use proptest::prelude::*;

#[test]
fn stationary_distribution_is_invariant_on_random_mdps() {
    for seed in 0..20 {
        let env = random_env(6, 3, seed);
        for pi in [&env.behavior, &env.target] {
            let p = policy_transition_matrix(&env.mdp, pi).unwrap();
            let d = stationary_distribution(&p).unwrap();
            let moved = vec_mat(&d, &p);
            let residual = common::sup_diff(&moved, &d);
            assert!(residual <= 1e-12, "seed {seed}: residual {residual}");
            assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn discounted_visitation_satisfies_lemma_3_for_random_functions() {
    let mut r = rng(7);
    for seed in 0..5 {
        let env = random_env(5, 2, seed);
        for gamma in [0.5, 0.9, 0.99] {
            let p = policy_transition_matrix(&env.mdp, &env.target).unwrap();
            let d = discounted_visitation(&p, env.mdp.initial(), gamma).unwrap();
            for _ in 0..50 {
                let f = uniform_vec(&mut r, 5, -3.0, 3.0);
                let pf = mat_vec(&p, &f);
                let lhs: f64 = (0..5).map(|s| d[s] * (gamma * pf[s] - f[s])).sum();
                let init: f64 = (0..5).map(|s| env.mdp.initial()[s] * f[s]).sum();
                assert!((lhs + (1.0 - gamma) * init).abs() <= 1e-8);
            }
        }
    }
}

#[test]
fn discounted_visitation_of_circle_is_uniform_with_zero_residual() {
    let env =
        ope::environments::build_circle(ope::environments::CircleSpec { n: 9, rho: 0.35 }).unwrap();
    let gamma = 0.9;
    let p = policy_transition_matrix(&env.mdp, &env.target).unwrap();
    let d = visitation(&env.mdp, &env.target, gamma).unwrap();
    let moved = vec_mat(&d, &p);
    for s in 0..9 {
        let residual = gamma * moved[s] - d[s] + (1.0 - gamma) * env.mdp.initial()[s];
        assert!(residual.abs() <= 1e-10);
        assert!((d[s] - 1.0 / 9.0).abs() <= 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn expected_reward_is_invariant_to_relabeling(
        seed in 0u64..1000,
        perm in Just((0..6).collect::<Vec<usize>>()).prop_shuffle(),
        gamma in prop_oneof![Just(1.0), 0.5f64..0.99],
    ) {
        let env = random_env(6, 2, seed);
        let base = expected_reward_exact(&env.mdp, &env.target, gamma).unwrap();
        let relabeled = env.mdp.permute_states(&perm).unwrap();
        // a policy row follows its state to the new label
        let mut rows = vec![Vec::new(); 6];
        for s in 0..6 {
            rows[perm[s]] = env.target.row(s).to_vec();
        }
        let target = ope::StochasticPolicy::from_rows(rows).unwrap();
        let moved = expected_reward_exact(&relabeled, &target, gamma).unwrap();
        prop_assert!((base - moved).abs() <= 1e-10, "{base} vs {moved}");
    }

    #[test]
    fn sampling_is_bit_reproducible(seed in any::<u64>(), horizon in 1usize..40) {
        let env = random_env(4, 3, 3);
        let a = sample_trajectory(&env.mdp, &env.behavior, horizon, seed).unwrap();
        let b = sample_trajectory(&env.mdp, &env.behavior, horizon, seed).unwrap();
        prop_assert_eq!(a, b);
    }
}
