use std::collections::HashSet;

use ope::mdp::finite_horizon_reward;
use ope::{Trajectory, TransitionSample};
use ope_bench::config::{EstimatorKind, ExperimentConfig, SweepVariable};
use ope_bench::data::{read_trajectories, write_trajectories};
use ope_bench::env::build_environment;
use ope_bench::eval::run_eval;
use ope_bench::fit::run_fit;
use ope_bench::output::write_csv;
use ope_bench::pipeline::ground_truth;
use ope_bench::sweep::{log_mse, run_sweep, summarize, SweepRow, SWEEP_HEADER};
use ope_bench::variance::run_variance_demo;

fn circle(extra: &str) -> ExperimentConfig {
    let text = format!(
        "schema_version = 1\nname = \"t\"\n{extra}\n[environment]\nkind = \"circle\"\nn = 7\nrho = 0.4\n"
    );
    ExperimentConfig::from_toml(&text).unwrap()
}

#[test]
fn empty_results_give_header_only_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.csv");
    write_csv::<SweepRow>(&path, &SWEEP_HEADER, &[]).unwrap();
    assert_eq!(
        std::fs::read_to_string(&path).unwrap(),
        "sweep_var,sweep_value,estimator,replicate,seed,estimate,truth,sq_error\n"
    );
}

#[test]
fn trajectory_file_matches_golden_and_round_trips() {
    let step = |s, a, s_next, r, t| TransitionSample { s, a, s_next, r, t };
    let trajs = vec![
        Trajectory::new(vec![step(2, 1, 3, 1.0, 0), step(3, 0, 2, 0.0, 1)]).unwrap(),
        Trajectory::new(vec![step(0, 1, 1, 0.5, 0)]).unwrap(),
    ];
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.csv");
    write_trajectories(&path, &trajs).unwrap();
    let golden = include_str!("golden/three_rows.csv");
    assert_eq!(std::fs::read_to_string(&path).unwrap(), golden);
    assert_eq!(read_trajectories(&path).unwrap(), trajs);
}

#[test]
fn missing_data_file_is_a_clean_error() {
    let err = read_trajectories(std::path::Path::new("/nonexistent/data.csv")).unwrap_err();
    assert!(err.to_string().contains("does not exist"), "{err}");
    let mut config = circle("");
    config.data.path = Some("/nonexistent/data.csv".into());
    assert!(run_fit(&config, tempfile::tempdir().unwrap().path()).is_err());
}

#[test]
fn sweep_rows_cover_grid_with_distinct_seeds() {
    let config = circle(
        "seed = 5\nreplicates = 3\nestimators = [\"trajectory_wis\", \"naive_average\"]\n\
         [data]\ntrajectories = 10\nhorizon = 5\n[sweep]\nvariable = \"n\"\nvalues = [5, 10, 20]\n",
    );
    let rows = run_sweep(&config).unwrap();
    assert_eq!(rows.len(), 3 * 2 * 3);
    let seeds: HashSet<(String, u64)> = rows
        .iter()
        .map(|r| (r.sweep_value.to_string(), r.seed))
        .collect();
    // one seed per (grid point, replicate), none shared across grid points
    assert_eq!(seeds.len(), 9);
    let distinct: HashSet<u64> = rows.iter().map(|r| r.seed).collect();
    assert_eq!(distinct.len(), 9);
    assert_eq!(distinct.iter().min(), Some(&5));
    assert_eq!(run_sweep(&config).unwrap(), rows);
}

#[test]
fn truth_matches_core_and_circle_value() {
    let config = circle("[data]\nhorizon = 13\ngamma = 0.9\n");
    let env = build_environment(&config.environment, None).unwrap();
    let t = ground_truth(&env, &config.data).unwrap();
    let core = finite_horizon_reward(&env.mdp, &env.target, 0.9, 13).unwrap();
    assert_eq!(t, core);
    // the target moves right with probability 1 − ρ and only that pays
    assert!((t - 0.6).abs() < 1e-12);
}

#[test]
fn exact_fit_on_circle_is_constant() {
    let mut config = circle("[data]\ntrajectories = 20\nhorizon = 10\n");
    config.ratio.method = ope_bench::config::RatioMethod::Exact;
    let dir = tempfile::tempdir().unwrap();
    let (fitted, written) = run_fit(&config, dir.path()).unwrap();
    for w in fitted.model.weights() {
        assert!((w - 1.0).abs() < 1e-8, "{w}");
    }
    assert_eq!(written.len(), 4);
    let weights = std::fs::read_to_string(dir.path().join("t_weights.csv")).unwrap();
    assert_eq!(weights.lines().count(), 8);
    // eval picks up the sampled data written by fit-ratio
    let rows = run_eval(&config, Some(dir.path())).unwrap();
    assert_eq!(rows.len(), EstimatorKind::ALL.len());
    assert!(rows.iter().all(|r| r.status == "ok"), "{rows:?}");
}

#[test]
fn on_policy_error_decreases_with_n() {
    let mut config = circle(
        "replicates = 40\nestimators = [\"trajectory_wis\", \"naive_average\"]\n\
         [data]\nhorizon = 20\n[sweep]\nvariable = \"n\"\nvalues = [5, 50, 500]\n",
    );
    if let ope_bench::config::EnvironmentConfig::Circle(spec) = &mut config.environment {
        spec.rho = 0.5;
    }
    let rows = run_sweep(&config).unwrap();
    let summary = summarize(&rows, &config.estimators);
    for kind in [EstimatorKind::TrajectoryWis, EstimatorKind::NaiveAverage] {
        let m: Vec<f64> = [5.0, 50.0, 500.0]
            .iter()
            .map(|&n| log_mse(&summary, SweepVariable::N, n, kind).unwrap())
            .collect();
        assert!(m[0] > m[1] && m[1] > m[2], "{kind}: {m:?}");
    }
}

#[test]
fn horizon_hurts_trajectory_weights_not_stationary_ones() {
    let config = circle(
        "replicates = 30\nestimators = [\"trajectory_wis\", \"stationary_ratio_exact\"]\n\
         [data]\ntrajectories = 50\n[sweep]\nvariable = \"horizon\"\nvalues = [5, 100]\n",
    );
    let summary = summarize(&run_sweep(&config).unwrap(), &config.estimators);
    let at = |t: f64, k| log_mse(&summary, SweepVariable::Horizon, t, k).unwrap();
    assert!(at(100.0, EstimatorKind::TrajectoryWis) > at(5.0, EstimatorKind::TrajectoryWis));
    assert!(
        at(100.0, EstimatorKind::StationaryRatioExact)
            < at(5.0, EstimatorKind::StationaryRatioExact)
    );
}

#[test]
fn variance_demo_is_exact_on_policy() {
    let config =
        circle("[variance_demo]\nrho = [0.5, 0.45]\nhorizons = [3, 8]\nreplicates = 20000\n");
    let rows = run_variance_demo(config.variance_demo.as_ref().unwrap(), 9).unwrap();
    assert_eq!(rows.len(), 4);
    assert_eq!(
        rows.iter().map(|r| r.seed).collect::<Vec<_>>(),
        vec![9, 10, 11, 12]
    );
    for r in &rows[..2] {
        assert_eq!(r.var_weight_closed, 0.0);
        assert_eq!(r.var_weight_empirical, 0.0);
        assert_eq!(r.mean_weight, 1.0);
    }
    for r in &rows[2..] {
        assert!(r.var_weight_rel_error < 0.1, "{r:?}");
    }
}

#[test]
fn shipped_configs_parse() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut count = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let config = ExperimentConfig::load(&path)
                .unwrap_or_else(|e| panic!("{}: {e:#}", path.display()));
            build_environment(&config.environment, config.data.alpha).unwrap();
            count += 1;
        }
    }
    assert!(count >= 4);
}
