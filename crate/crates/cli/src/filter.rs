use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use sssnav_core::config::PipelineConfig;
use sssnav_core::filter::{run, FilterMode, GaussianBelief};
use sssnav_core::geometry::LandmarkMap;
use sssnav_core::io::{self, RunManifest};
use sssnav_core::simulator::derive_seed;

use crate::util;

/// Resolved filter inputs: where the map and run files come from, and the
/// manifest to extend with estimate paths when one was given.
pub struct FilterInputs {
    pub map: LandmarkMap,
    pub run_paths: Vec<PathBuf>,
    pub manifest: Option<(PathBuf, RunManifest)>,
}

/// Collects inputs either from a manifest or from explicit run files plus
/// `--map`; mixing the two is rejected so provenance stays unambiguous.
pub fn resolve_inputs(
    manifest_path: Option<&Path>,
    runs: &[PathBuf],
    map_path: Option<&Path>,
) -> Result<FilterInputs> {
    match manifest_path {
        Some(mp) => {
            if !runs.is_empty() || map_path.is_some() {
                bail!("--manifest already names the map and runs; drop the extra arguments");
            }
            let manifest = RunManifest::load(mp)?;
            let base = mp.parent().unwrap_or_else(|| Path::new("."));
            let map = io::read_map_json(&base.join(&manifest.map))?;
            let run_paths = manifest.runs.iter().map(|r| base.join(r)).collect();
            Ok(FilterInputs {
                map,
                run_paths,
                manifest: Some((mp.to_path_buf(), manifest)),
            })
        }
        None => {
            let Some(mp) = map_path else {
                bail!("need --map when no --manifest is given");
            };
            if runs.is_empty() {
                bail!("need at least one run CSV when no --manifest is given");
            }
            Ok(FilterInputs {
                map: io::read_map_json(mp)?,
                run_paths: runs.to_vec(),
                manifest: None,
            })
        }
    }
}

/// Filters every run into `<out>/<run stem>.est.csv`. Each run's filter
/// seed derives from the base seed and the run's index, so per-run results
/// do not depend on which other runs are processed alongside them. The
/// base seed comes from `--seed`, else the manifest, else the config.
pub fn cmd_filter(
    cfg: &PipelineConfig,
    inputs: &mut FilterInputs,
    out: &Path,
    mode_override: Option<FilterMode>,
    seed_override: Option<u64>,
) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let base_seed = seed_override
        .or(inputs.manifest.as_ref().map(|(_, m)| m.seed))
        .unwrap_or(cfg.scenario.seed);

    let estimate_paths: Vec<PathBuf> = inputs
        .run_paths
        .iter()
        .map(|p| util::estimate_path(out, p))
        .collect();
    util::try_for_each_indexed(&inputs.run_paths, |i, run_path| {
        let truth = io::read_run_csv(run_path)
            .with_context(|| format!("reading {}", run_path.display()))?;
        let Some(first) = truth.steps.first() else {
            bail!("{}: run has no steps", run_path.display());
        };
        let mut fc = cfg.filter_config(derive_seed(base_seed, util::run_index(run_path, i) as u64));
        if let Some(mode) = mode_override {
            fc.mode = mode;
        }
        let initial = GaussianBelief::certain(&first.state);
        let records = run(&initial, &truth.filter_inputs(), &inputs.map, &fc)
            .with_context(|| format!("filtering {}", run_path.display()))?;
        io::write_estimate_csv(&estimate_paths[i], &records)?;
        log::debug!("wrote {}", estimate_paths[i].display());
        Ok(())
    })?;
    log::info!(
        "filtered {} runs into {}",
        inputs.run_paths.len(),
        out.display()
    );

    if let Some((mp, manifest)) = inputs.manifest.as_mut() {
        let base = mp.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
        for est in &estimate_paths {
            let entry = util::manifest_path_for(&base, est);
            if !manifest.estimates.contains(&entry) {
                manifest.estimates.push(entry);
            }
        }
        manifest.save(mp)?;
    }
    Ok(estimate_paths)
}
