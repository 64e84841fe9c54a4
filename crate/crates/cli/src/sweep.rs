use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use sssnav_core::config::PipelineConfig;
use sssnav_core::filter::FilterMode;
use sssnav_core::io;
use sssnav_core::simulator::LandmarkLayout;

use crate::evaluate::cmd_evaluate;
use crate::filter::{cmd_filter, resolve_inputs};
use crate::simulate::cmd_simulate;

#[derive(Debug, Serialize)]
struct SweepRow {
    /// Grid spacing in meters; absent for the landmark-free case.
    #[serde(skip_serializing_if = "Option::is_none")]
    spacing: Option<f64>,
    label: String,
    observation_frequency: f64,
    dr_final_rmse_2d: f64,
    sss_final_rmse_2d: f64,
    sss_mean_rmse_2d: f64,
    sss_p_below_5m_2d: f64,
}

/// Applies one sweep token to the scenario: a number replaces the grid
/// spacing, `none` empties the map entirely.
fn apply_spacing(cfg: &PipelineConfig, token: &str) -> Result<PipelineConfig> {
    let mut out = cfg.clone();
    if token.eq_ignore_ascii_case("none") {
        out.scenario.layout = LandmarkLayout::Explicit {
            landmarks: Vec::new(),
        };
        return Ok(out);
    }
    let spacing: f64 = token
        .parse()
        .with_context(|| format!("spacing {token:?} is neither a number nor \"none\""))?;
    match &mut out.scenario.layout {
        LandmarkLayout::Grid { spacing: s, .. } => *s = spacing,
        LandmarkLayout::Explicit { .. } => {
            bail!("spacing sweeps need a grid layout in the config")
        }
    }
    Ok(out)
}

/// Runs the whole pipeline once per spacing under `out/spacing_<token>/`
/// and aggregates the headline numbers into `out/sweep_summary.json`.
/// Every spacing reuses the same base seed: truth trajectories do not
/// depend on the landmark layout, so runs differ only in what is observed.
pub fn cmd_sweep(
    config_path: &Path,
    out: &Path,
    spacings: &[String],
    runs: usize,
    seed_override: Option<u64>,
    cf_points: usize,
) -> Result<()> {
    anyhow::ensure!(!spacings.is_empty(), "need at least one spacing");
    let (cfg, _) = PipelineConfig::load(config_path)
        .with_context(|| format!("loading {}", config_path.display()))?;
    let base_seed = seed_override.unwrap_or(cfg.scenario.seed);

    let mut rows = Vec::with_capacity(spacings.len());
    for token in spacings {
        let variant = apply_spacing(&cfg, token)?;
        let raw = variant.to_toml_string();
        let dir = out.join(format!("spacing_{token}"));
        log::info!("sweep spacing {token}: {}", dir.display());

        let sim = cmd_simulate(&variant, &raw, &dir, runs, Some(base_seed))?;
        for (mode, sub) in [(FilterMode::Sss, "est_sss"), (FilterMode::Dr, "est_dr")] {
            let mut inputs = resolve_inputs(Some(&sim.manifest_path), &[], None)?;
            cmd_filter(&variant, &mut inputs, &dir.join(sub), Some(mode), None)?;
        }
        let eval = cmd_evaluate(
            &sim.manifest_path,
            &dir.join("est_sss"),
            &dir.join("est_dr"),
            &dir.join("metrics"),
            cf_points,
        )?;

        rows.push(SweepRow {
            spacing: token.parse().ok(),
            label: token.clone(),
            observation_frequency: sim.mean_observation_frequency,
            dr_final_rmse_2d: eval.summary.dr.final_rmse_2d,
            sss_final_rmse_2d: eval.summary.sss.final_rmse_2d,
            sss_mean_rmse_2d: eval.summary.sss.mean_rmse_2d,
            sss_p_below_5m_2d: eval.summary.sss.p_below_5m_2d,
        });
    }

    let mut text = serde_json::to_string_pretty(&rows)?;
    text.push('\n');
    io::write_atomic(&out.join("sweep_summary.json"), text.as_bytes())?;
    log::info!("wrote {}", out.join("sweep_summary.json").display());
    Ok(())
}
