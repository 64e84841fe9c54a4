mod evaluate;
mod filter;
mod simulate;
mod sweep;
mod util;

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use sssnav_core::config::PipelineConfig;

use util::ModeArg;

/// Simulation, filtering, and evaluation pipeline for landmark-aided
/// sonar navigation.
#[derive(Parser)]
#[command(name = "sssnav", version, about)]
struct Cli {
    /// Worker threads for run-level parallelism (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate ground-truth runs, a landmark map, and a manifest.
    Simulate {
        /// Scenario config (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Number of Monte Carlo runs.
        #[arg(long, default_value_t = 1)]
        runs: usize,
        /// Override the config's base seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the navigation filter over recorded runs.
    Filter {
        /// Scenario config (TOML); supplies the filter parameters.
        #[arg(long)]
        config: PathBuf,
        /// Manifest naming the map and runs (from `simulate`).
        #[arg(long, conflicts_with_all = ["runs", "map"])]
        manifest: Option<PathBuf>,
        /// Run CSVs, when no manifest is given.
        runs: Vec<PathBuf>,
        /// Landmark map JSON, when no manifest is given.
        #[arg(long)]
        map: Option<PathBuf>,
        /// Output directory for estimate CSVs.
        #[arg(long)]
        out: PathBuf,
        /// Override the config's filter mode.
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Override the base seed (default: manifest seed, then config).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score estimate directories against ground truth and write metrics.
    Evaluate {
        /// Manifest naming the map and runs.
        #[arg(long)]
        manifest: PathBuf,
        /// Directory with landmark-aided estimates.
        #[arg(long)]
        sss: PathBuf,
        /// Directory with dead-reckoning estimates.
        #[arg(long)]
        dr: PathBuf,
        /// Output directory for rmse.csv, cf.csv, timing.csv, summary.json.
        #[arg(long)]
        out: PathBuf,
        /// Grid resolution of the cumulative-frequency curve.
        #[arg(long, default_value_t = 201)]
        cf_points: usize,
    },
    /// Run simulate, filter, and evaluate across landmark spacings.
    Sweep {
        /// Scenario config (TOML) with a grid layout.
        #[arg(long)]
        config: PathBuf,
        /// Output directory; one subdirectory per spacing.
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated spacings in meters; `none` for an empty map.
        #[arg(long, value_delimiter = ',', required = true)]
        spacings: Vec<String>,
        /// Monte Carlo runs per spacing.
        #[arg(long, default_value_t = 10)]
        runs: usize,
        /// Override the config's base seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 201)]
        cf_points: usize,
    },
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Simulate {
            config,
            out,
            runs,
            seed,
        } => {
            simulate::cmd_simulate_from_path(&config, &out, runs, seed)?;
        }
        Command::Filter {
            config,
            manifest,
            runs,
            map,
            out,
            mode,
            seed,
        } => {
            let (cfg, _) = PipelineConfig::load(&config)
                .with_context(|| format!("loading {}", config.display()))?;
            let mut inputs = filter::resolve_inputs(manifest.as_deref(), &runs, map.as_deref())?;
            filter::cmd_filter(&cfg, &mut inputs, &out, mode.map(Into::into), seed)?;
        }
        Command::Evaluate {
            manifest,
            sss,
            dr,
            out,
            cf_points,
        } => {
            evaluate::cmd_evaluate(&manifest, &sss, &dr, &out, cf_points)?;
        }
        Command::Sweep {
            config,
            out,
            spacings,
            runs,
            seed,
            cf_points,
        } => {
            sweep::cmd_sweep(&config, &out, &spacings, runs, seed, cf_points)?;
        }
    }
    Ok(())
}

#[cfg(feature = "parallel")]
fn init_jobs(jobs: Option<usize>) {
    if let Some(n) = jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("thread pool already initialized: {e}");
        }
    }
}

#[cfg(not(feature = "parallel"))]
fn init_jobs(jobs: Option<usize>) {
    if jobs.is_some() {
        log::warn!("built without the parallel feature; --jobs is ignored");
    }
}

fn main() {
    env_logger::Builder::from_env(
        env_logger::Env::default().filter_or("SSSNAV_LOG", "info"),
    )
    .format_timestamp(None)
    .init();
    let cli = Cli::parse();
    init_jobs(cli.jobs);
    if let Err(e) = dispatch(cli.command) {
        log::error!("{e:#}");
        std::process::exit(1);
    }
}
