use std::path::{Path, PathBuf};
use std::sync::Mutex;

use anyhow::{Context, Result};
use sssnav_core::config::PipelineConfig;
use sssnav_core::io::{self, RunManifest};
use sssnav_core::simulator::{derive_seed, run_scenario};

use crate::util;

pub struct SimulateOutput {
    pub manifest_path: PathBuf,
    /// Mean over runs of the fraction of pings with a true detection.
    pub mean_observation_frequency: f64,
}

/// Generates `runs` ground-truth runs under `out` and writes the manifest
/// last, so a manifest on disk always points at complete files.
pub fn cmd_simulate(
    cfg: &PipelineConfig,
    raw_config: &str,
    out: &Path,
    runs: usize,
    seed_override: Option<u64>,
) -> Result<SimulateOutput> {
    anyhow::ensure!(runs > 0, "need at least one run");
    cfg.validate()?;
    let base_seed = seed_override.unwrap_or(cfg.scenario.seed);

    let map = cfg.scenario.layout.build_map()?;
    let map_path = out.join("map.json");
    io::write_map_json(&map_path, &map)?;
    log::info!("wrote {} ({} landmarks)", map_path.display(), map.len());

    let run_paths: Vec<PathBuf> = (0..runs)
        .map(|i| out.join("runs").join(format!("run_{i:03}.csv")))
        .collect();
    let frequencies = Mutex::new(vec![0.0; runs]);
    util::try_for_each_indexed(&run_paths, |i, path| {
        let mut scenario = cfg.scenario.clone();
        scenario.seed = derive_seed(base_seed, i as u64);
        let run = run_scenario(&scenario)?;
        io::write_run_csv(path, &run)?;
        frequencies.lock().unwrap()[i] = run.observation_frequency;
        log::debug!("wrote {} ({} steps)", path.display(), run.len());
        Ok(())
    })?;
    let frequencies = frequencies.into_inner().unwrap();
    let mean_observation_frequency =
        frequencies.iter().sum::<f64>() / frequencies.len() as f64;

    let mut manifest = RunManifest::new(raw_config.as_bytes(), base_seed);
    manifest.map = util::manifest_path_for(out, &map_path);
    manifest.runs = run_paths
        .iter()
        .map(|p| util::manifest_path_for(out, p))
        .collect();
    let manifest_path = out.join("manifest.json");
    manifest.save(&manifest_path)?;
    log::info!(
        "simulated {} runs, mean observation frequency {:.4}",
        runs,
        mean_observation_frequency
    );

    Ok(SimulateOutput {
        manifest_path,
        mean_observation_frequency,
    })
}

/// Loads the config, then simulates. Load and validation failures happen
/// before anything is written.
pub fn cmd_simulate_from_path(
    config_path: &Path,
    out: &Path,
    runs: usize,
    seed_override: Option<u64>,
) -> Result<SimulateOutput> {
    let (cfg, raw) = PipelineConfig::load(config_path)
        .with_context(|| format!("loading {}", config_path.display()))?;
    cmd_simulate(&cfg, &raw, out, runs, seed_override)
}
