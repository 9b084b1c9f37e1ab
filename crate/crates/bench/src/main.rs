use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use ope_bench::config::ExperimentConfig;
use ope_bench::eval::{run_eval, ESTIMATE_HEADER};
use ope_bench::fit::run_fit;
use ope_bench::output::{write_csv, write_json, RunInfo};
use ope_bench::sweep::{run_sweep, summarize, SUMMARY_HEADER, SWEEP_HEADER};
use ope_bench::variance::{run_variance_demo, VARIANCE_HEADER};

#[derive(Parser)]
#[command(
    name = "ope-bench",
    version,
    about = "Off-policy evaluation experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Replicated estimator runs over the configured grid.
    Sweep(Common),
    /// Closed-form vs Monte Carlo importance-weight variance on the circle.
    VarianceDemo(Common),
    /// Fit a density-ratio model.
    FitRatio(Common),
    /// Run every configured estimator once.
    Eval(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = ".")]
    output_dir: PathBuf,
    /// Worker threads; all cores by default.
    #[arg(long)]
    jobs: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut config = ExperimentConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        std::fs::create_dir_all(&self.output_dir)
            .with_context(|| format!("creating {}", self.output_dir.display()))?;
        Ok(config)
    }

    fn path(&self, config: &ExperimentConfig, suffix: &str) -> PathBuf {
        self.output_dir.join(format!("{}_{suffix}", config.name))
    }
}

fn write_info(path: &Path, command: &str, config: &ExperimentConfig) -> Result<()> {
    write_json(
        path,
        &RunInfo {
            command,
            name: &config.name,
            seed: config.seed,
            config_hash: config.hash(),
            version: env!("CARGO_PKG_VERSION"),
        },
    )
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Sweep(c) => {
            let config = c.load()?;
            let rows = run_sweep(&config)?;
            let summary = summarize(&rows, &config.estimators);
            write_csv(&c.path(&config, "sweep.csv"), &SWEEP_HEADER, &rows)?;
            write_csv(&c.path(&config, "summary.csv"), &SUMMARY_HEADER, &summary)?;
            write_info(&c.path(&config, "sweep_info.json"), "sweep", &config)?;
            for s in &summary {
                println!(
                    "{}={} {:<24} log10 mse {:>8.3} ({} ok, {} failed)",
                    s.sweep_var, s.sweep_value, s.estimator, s.log10_mse, s.replicates, s.failures
                );
            }
        }
        Command::VarianceDemo(c) => {
            let config = c.load()?;
            let demo = config
                .variance_demo
                .as_ref()
                .context("config has no [variance_demo] section")?;
            let rows = run_variance_demo(demo, config.seed)?;
            write_csv(&c.path(&config, "variance.csv"), &VARIANCE_HEADER, &rows)?;
            write_info(
                &c.path(&config, "variance_info.json"),
                "variance-demo",
                &config,
            )?;
            for r in &rows {
                println!(
                    "rho={} T={}: Var[w] {:.6e} vs {:.6e} ({:.2}%)",
                    r.rho,
                    r.horizon,
                    r.var_weight_empirical,
                    r.var_weight_closed,
                    100.0 * r.var_weight_rel_error
                );
            }
        }
        Command::FitRatio(c) => {
            let config = c.load()?;
            let (fitted, written) = run_fit(&config, &c.output_dir)?;
            write_info(&c.path(&config, "fit_info.json"), "fit-ratio", &config)?;
            if let Some(loss) = fitted.loss_trace.last() {
                println!("final loss {loss:.6e}");
            }
            for p in written {
                info!("wrote {}", p.display());
            }
        }
        Command::Eval(c) => {
            let config = c.load()?;
            let rows = run_eval(&config, None)?;
            write_csv(&c.path(&config, "estimates.csv"), &ESTIMATE_HEADER, &rows)?;
            write_info(&c.path(&config, "eval_info.json"), "eval", &config)?;
            for r in &rows {
                println!("{:<24} {:>12.6} ({})", r.estimator, r.estimate, r.status);
            }
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let jobs = match &cli.command {
        Command::Sweep(c) | Command::VarianceDemo(c) | Command::FitRatio(c) | Command::Eval(c) => {
            c.jobs
        }
    };
    if let Some(n) = jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring thread pool")?;
    }
    run(cli)
}
