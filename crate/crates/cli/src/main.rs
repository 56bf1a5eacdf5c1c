use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use nap_core::experiment::{emit_results, run_experiment, sweep, write_sweep_csv, ExperimentConfig, SweepAxis};

/// Embarrassingly parallel MCMC with flow-based subposterior aggregation.
#[derive(Debug, Parser)]
#[command(name = "nap", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one experiment and write its outputs.
    Run(Common),
    /// Run an experiment once per axis value (and repeat), then write `sweep.csv`.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Dotted config key and values, e.g. `k=2,5,10` or `model.p=5,10`.
        #[arg(long)]
        axis: String,
        #[arg(long, default_value_t = 1)]
        repeats: usize,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides `out_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for the global pool (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<(ExperimentConfig, PathBuf)> {
        let mut cfg = ExperimentConfig::from_file(&self.config).with_context(|| format!("loading {}", self.config.display()))?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        let out = match (&self.out, &cfg.out_dir) {
            (Some(o), _) => o.clone(),
            (None, Some(o)) => o.clone(),
            (None, None) => PathBuf::from("results").join(cfg.hash()),
        };
        if let Some(n) = self.threads {
            if n == 0 {
                bail!("--threads must be at least 1");
            }
            rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring thread pool")?;
        }
        Ok((cfg, out))
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Run(common) => {
            let (cfg, out) = common.load()?;
            log::info!("config {} ({})", cfg.hash(), cfg.model.name());
            let artifacts = run_experiment(&cfg)?;
            let files = emit_results(&artifacts, &out)?;
            for m in &artifacts.methods {
                println!(
                    "{:<10} rmse={:.4} conc={:.3} kl={:.4} bytes={}",
                    m.method.name(),
                    m.metrics.rmse,
                    m.metrics.concentration_ratio,
                    m.metrics.kl_divergence,
                    m.metrics.bytes_communicated
                );
            }
            log::info!("wrote {} files to {}", files.len(), out.display());
        }
        Command::Sweep { common, axis, repeats } => {
            let (cfg, out) = common.load()?;
            let axis = SweepAxis::parse(&axis)?;
            let result = sweep(&cfg, &axis, repeats, |a, value, i| {
                emit_results(a, &run_dir(&out, &axis.name, value, i)).map(|_| ())
            })?;
            std::fs::create_dir_all(&out)?;
            let path = out.join("sweep.csv");
            write_sweep_csv(&result, &path)?;
            log::info!("wrote {} ({} failed runs)", path.display(), result.failures);
            if result.failures > 0 {
                bail!("{} of the sweep runs failed; see {}", result.failures, path.display());
            }
        }
    }
    Ok(())
}

/// `<out>/<axis>=<value>/rep<i>`, with path-hostile characters replaced.
fn run_dir(out: &Path, axis: &str, value: &str, repeat: usize) -> PathBuf {
    let cell: String = format!("{axis}={value}")
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "=._-".contains(c) { c } else { '_' })
        .collect();
    out.join(cell).join(format!("rep{repeat}"))
}
