//! Experiment configuration files.
//!
//! Configs are TOML with an explicit `schema_version`. A minimal sweep:
//!
//! ```toml
//! schema_version = 1
//! name = "circle-horizon"
//! seed = 0
//! replicates = 200
//! estimators = ["trajectory_wis", "step_wis", "stationary_ratio"]
//!
//! [environment]
//! kind = "circle"
//! n = 11
//! rho = 0.4
//!
//! [data]
//! trajectories = 100
//! horizon = 20
//! gamma = 1.0
//!
//! [sweep]
//! variable = "horizon"
//! values = [20, 200]
//!
//! [ratio]
//! method = "sgd"
//! features = { kind = "one_hot" }
//! kernel = { kind = "delta" }
//! sgd = { iterations = 5000, batch_size = 256 }
//! ```
//!
//! Relative paths inside a config resolve against the config's directory.

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use ope::density_ratio::{KernelSpec, SgdConfig};
use ope::environments::{CircleSpec, GridworldSpec, RandomMdpSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<EstimatorKind>,
    pub environment: EnvironmentConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub ratio: RatioConfig,
    #[serde(default)]
    pub variance_demo: Option<VarianceDemoConfig>,
}

fn default_name() -> String {
    "experiment".into()
}

fn default_replicates() -> usize {
    1
}

fn default_estimators() -> Vec<EstimatorKind> {
    EstimatorKind::ALL.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvironmentConfig {
    Circle(CircleSpec),
    Gridworld(GridworldSpec),
    Random(RandomMdpSpec),
    /// MDP and policies from files in the core JSON formats.
    File {
        mdp: PathBuf,
        behavior: PathBuf,
        target: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Trajectories per replicate.
    pub trajectories: usize,
    pub horizon: usize,
    pub gamma: f64,
    /// Behavior becomes `(1−α)·target + α·behavior`; for the gridworld this
    /// sets its own mixing weight.
    pub alpha: Option<f64>,
    /// Logged data for `fit-ratio` and `eval`; sampled from the environment
    /// when absent.
    pub path: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            trajectories: 100,
            horizon: 20,
            gamma: 1.0,
            alpha: None,
            path: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    /// Number of trajectories.
    N,
    #[serde(alias = "T")]
    Horizon,
    Gamma,
    Alpha,
}

impl SweepVariable {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepVariable::N => "n",
            SweepVariable::Horizon => "horizon",
            SweepVariable::Gamma => "gamma",
            SweepVariable::Alpha => "alpha",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub variable: SweepVariable,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    TrajectoryIs,
    TrajectoryWis,
    StepIs,
    StepWis,
    /// Self-normalized stationary weighting with the configured ratio.
    StationaryRatio,
    /// Same, with the exact ratio of the environment.
    StationaryRatioExact,
    NaiveAverage,
    ModelBased,
    OnPolicyOracle,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 9] = [
        EstimatorKind::TrajectoryIs,
        EstimatorKind::TrajectoryWis,
        EstimatorKind::StepIs,
        EstimatorKind::StepWis,
        EstimatorKind::StationaryRatio,
        EstimatorKind::StationaryRatioExact,
        EstimatorKind::NaiveAverage,
        EstimatorKind::ModelBased,
        EstimatorKind::OnPolicyOracle,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorKind::TrajectoryIs => "trajectory_is",
            EstimatorKind::TrajectoryWis => "trajectory_wis",
            EstimatorKind::StepIs => "step_is",
            EstimatorKind::StepWis => "step_wis",
            EstimatorKind::StationaryRatio => "stationary_ratio",
            EstimatorKind::StationaryRatioExact => "stationary_ratio_exact",
            EstimatorKind::NaiveAverage => "naive_average",
            EstimatorKind::ModelBased => "model_based",
            EstimatorKind::OnPolicyOracle => "on_policy_oracle",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatioMethod {
    /// Minibatch descent on the sampled transitions.
    Sgd,
    /// Exact minimization of the population loss.
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureConfig {
    OneHot,
    /// Random Fourier features of the state coordinates; the bandwidth
    /// defaults to the median pairwise distance of observed next states.
    RandomFourier {
        dim: usize,
        bandwidth: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RatioConfig {
    pub method: RatioMethod,
    pub features: FeatureConfig,
    pub kernel: KernelSpec,
    /// The seed field is replaced by the replicate seed.
    pub sgd: SgdConfig,
    /// Saved ratio model used by `eval` instead of fitting.
    pub model: Option<PathBuf>,
}

impl Default for RatioConfig {
    fn default() -> Self {
        Self {
            method: RatioMethod::Sgd,
            features: FeatureConfig::OneHot,
            kernel: KernelSpec::delta(),
            sgd: SgdConfig::default(),
            model: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VarianceDemoConfig {
    pub rho: Vec<f64>,
    pub horizons: Vec<usize>,
    #[serde(default = "default_variance_replicates")]
    pub replicates: usize,
}

fn default_variance_replicates() -> usize {
    1_000_000
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).context("parsing config")?;
        config.validate()?;
        Ok(config)
    }

    /// Reads a config and resolves its relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut config =
            Self::from_toml(&text).with_context(|| format!("in config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.resolve_paths(base);
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let EnvironmentConfig::File {
            mdp,
            behavior,
            target,
        } = &mut self.environment
        {
            fix(mdp);
            fix(behavior);
            fix(target);
        }
        if let Some(p) = &mut self.data.path {
            fix(p);
        }
        if let Some(p) = &mut self.ratio.model {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.schema_version == SCHEMA_VERSION,
            "unsupported schema_version {} (expected {SCHEMA_VERSION})",
            self.schema_version
        );
        ensure!(self.replicates >= 1, "replicates must be at least 1");
        ensure!(!self.estimators.is_empty(), "no estimators listed");
        ensure!(
            !self.name.is_empty()
                && self
                    .name
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)),
            "name {:?} must be nonempty and use only [A-Za-z0-9._-]",
            self.name
        );
        check_data(&self.data)?;
        if let Some(sweep) = &self.sweep {
            ensure!(!sweep.values.is_empty(), "sweep grid is empty");
            for &v in &sweep.values {
                let mut data = self.data.clone();
                apply_sweep(&mut data, sweep.variable, v)?;
                check_data(&data)?;
            }
        }
        if let FeatureConfig::RandomFourier { dim, bandwidth } = self.ratio.features {
            ensure!(dim >= 1, "random Fourier dimension must be positive");
            if let Some(h) = bandwidth {
                ensure!(h > 0.0, "feature bandwidth must be positive");
            }
        }
        if let Some(v) = &self.variance_demo {
            ensure!(
                !v.rho.is_empty() && !v.horizons.is_empty(),
                "variance demo grid is empty"
            );
            ensure!(
                v.replicates >= 2,
                "variance demo needs at least 2 replicates"
            );
            ensure!(
                v.rho.iter().all(|r| *r > 0.0 && *r < 1.0),
                "variance demo rho values must lie in (0, 1)"
            );
            ensure!(
                v.horizons.iter().all(|t| *t >= 1),
                "horizons must be at least 1"
            );
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form of the effective config.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    /// `(variable, value)` grid; a config without a sweep is a single point
    /// over the number of trajectories.
    pub fn grid(&self) -> Vec<(SweepVariable, f64)> {
        match &self.sweep {
            Some(s) => s.values.iter().map(|&v| (s.variable, v)).collect(),
            None => vec![(SweepVariable::N, self.data.trajectories as f64)],
        }
    }
}

fn check_data(d: &DataConfig) -> Result<()> {
    ensure!(d.trajectories >= 1, "need at least one trajectory");
    ensure!(d.horizon >= 1, "horizon must be at least 1");
    ensure!(
        d.gamma > 0.0 && d.gamma <= 1.0,
        "gamma {} outside (0, 1]",
        d.gamma
    );
    if let Some(a) = d.alpha {
        ensure!((0.0..=1.0).contains(&a), "alpha {a} outside [0, 1]");
    }
    Ok(())
}

fn as_count(v: f64, what: &str) -> Result<usize> {
    if v >= 1.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
        Ok(v as usize)
    } else {
        bail!("{what} sweep value {v} is not a positive integer")
    }
}

/// Data parameters at one grid point.
pub fn apply_sweep(data: &mut DataConfig, variable: SweepVariable, value: f64) -> Result<()> {
    match variable {
        SweepVariable::N => data.trajectories = as_count(value, "n")?,
        SweepVariable::Horizon => data.horizon = as_count(value, "horizon")?,
        SweepVariable::Gamma => data.gamma = value,
        SweepVariable::Alpha => data.alpha = Some(value),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
schema_version = 1
[environment]
kind = "circle"
n = 5
rho = 0.4
"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(c.replicates, 1);
        assert_eq!(c.estimators.len(), EstimatorKind::ALL.len());
        assert_eq!(c.grid(), vec![(SweepVariable::N, 100.0)]);
        assert_eq!(c.ratio.sgd, SgdConfig::default());
    }

    #[test]
    fn rejects_bad_configs() {
        let bad = [
            MINIMAL.replace("schema_version = 1", "schema_version = 2"),
            MINIMAL.replace("schema_version = 1", "schema_version = 1\nreplicates = 0"),
            MINIMAL.replace("schema_version = 1", "schema_version = 1\nestimators = []"),
            MINIMAL.replace(
                "schema_version = 1",
                "schema_version = 1\nestimators = [\"magic\"]",
            ),
            MINIMAL.to_string() + "[sweep]\nvariable = \"n\"\nvalues = []\n",
            MINIMAL.to_string() + "[sweep]\nvariable = \"horizon\"\nvalues = [2.5]\n",
            MINIMAL.to_string() + "[sweep]\nvariable = \"gamma\"\nvalues = [1.5]\n",
            MINIMAL.to_string() + "[data]\nunknown = 1\n",
        ];
        for text in bad {
            assert!(ExperimentConfig::from_toml(&text).is_err(), "{text}");
        }
    }

    #[test]
    fn gridworld_fields_default() {
        let text = "schema_version = 1\n[environment]\nkind = \"gridworld\"\nwidth = 2\n";
        let c = ExperimentConfig::from_toml(text).unwrap();
        let EnvironmentConfig::Gridworld(spec) = c.environment else {
            panic!("not a gridworld");
        };
        assert_eq!(spec.width, 2);
        assert_eq!(spec.height, GridworldSpec::default().height);
    }

    #[test]
    fn hash_changes_with_seed() {
        let a = ExperimentConfig::from_toml(MINIMAL).unwrap();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
