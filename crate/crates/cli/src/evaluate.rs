use std::path::Path;
use std::sync::Mutex;

use anyhow::{Context, Result};
use sssnav_core::evaluation::{
    self, cf_curve, rmse_series, timing_by_gated, CfCurve, ErrorSeries, PositionSample,
};
use sssnav_core::io::{self, EvaluationSummary, ModeSummary, RunManifest, TimingSummary};

use crate::util;

/// One run's estimate track plus, when it came from a real estimate CSV,
/// the per-step timing samples.
struct EstimateTrack {
    samples: Vec<PositionSample>,
    timing: Vec<(usize, f64)>,
}

/// Reads `<dir>/<stem>.est.csv` if present; otherwise falls back to a run
/// CSV of the same name, treating its truth track as the estimate. The
/// fallback makes self-evaluation (pointing a mode at the runs directory)
/// work and keeps replayed external logs usable without a filter pass.
fn read_estimate_track(dir: &Path, run_path: &Path) -> Result<EstimateTrack> {
    let est = util::estimate_path(dir, run_path);
    if est.is_file() {
        let rows = io::read_estimate_csv(&est)?;
        return Ok(EstimateTrack {
            samples: rows.iter().map(|r| r.position_sample()).collect(),
            timing: rows
                .iter()
                .map(|r| (r.d_gated, r.update_micros))
                .collect(),
        });
    }
    let name = run_path.file_name().unwrap_or_default();
    let fallback = dir.join(name);
    let run = io::read_run_csv(&fallback)
        .with_context(|| format!("no {} and no run CSV fallback", est.display()))?;
    Ok(EstimateTrack {
        samples: evaluation::truth_samples(&run),
        timing: Vec::new(),
    })
}

fn mode_summary(series: &ErrorSeries, cf_2d: &CfCurve) -> ModeSummary {
    let mean = series.rmse_2d.iter().sum::<f64>() / series.rmse_2d.len() as f64;
    ModeSummary {
        final_rmse_2d: *series.rmse_2d.last().unwrap(),
        final_rmse_3d: *series.rmse_3d.last().unwrap(),
        mean_rmse_2d: mean,
        p_below_5m_2d: cf_2d.probability_below(5.0),
    }
}

pub struct EvaluateOutput {
    pub summary: EvaluationSummary,
}

/// Scores one estimate directory per mode against the manifest's runs and
/// writes `rmse.csv`, `cf.csv`, `timing.csv` (when timing samples exist),
/// and `summary.json` under `out`.
pub fn cmd_evaluate(
    manifest_path: &Path,
    sss_dir: &Path,
    dr_dir: &Path,
    out: &Path,
    cf_points: usize,
) -> Result<EvaluateOutput> {
    let mut manifest = RunManifest::load(manifest_path)?;
    let base = manifest_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .to_path_buf();
    manifest.verify_files(&base)?;

    let n = manifest.runs.len();
    let slots = Mutex::new((0..n).map(|_| None).collect::<Vec<_>>());
    util::try_for_each_indexed(&manifest.runs, |i, rel| {
        let run_path = base.join(rel);
        let run = io::read_run_csv(&run_path)?;
        let truth = evaluation::truth_samples(&run);
        let sss = read_estimate_track(sss_dir, &run_path)?;
        let dr = read_estimate_track(dr_dir, &run_path)?;
        slots.lock().unwrap()[i] = Some((truth, sss, dr));
        Ok(())
    })?;

    let mut truths = Vec::with_capacity(n);
    let mut sss_tracks = Vec::with_capacity(n);
    let mut dr_tracks = Vec::with_capacity(n);
    let mut timing_samples = Vec::new();
    for slot in slots.into_inner().unwrap() {
        let (truth, sss, dr) = slot.expect("every run scored");
        truths.push(truth);
        sss_tracks.push(sss.samples);
        timing_samples.extend(sss.timing);
        dr_tracks.push(dr.samples);
    }

    let sss_series = rmse_series(&sss_tracks, &truths)?;
    let dr_series = rmse_series(&dr_tracks, &truths)?;
    let (sss_cf2, _) = cf_curve(&sss_series)?;
    let (dr_cf2, _) = cf_curve(&dr_series)?;

    let rmse_path = out.join("rmse.csv");
    io::write_rmse_csv(
        &rmse_path,
        &sss_series.timestamps,
        &dr_series.rmse_2d,
        &sss_series.rmse_2d,
    )?;
    let cf_path = out.join("cf.csv");
    io::write_cf_csv(&cf_path, &dr_cf2, &sss_cf2, cf_points)?;

    let mut metric_paths = vec![rmse_path, cf_path];
    let timing = if timing_samples.is_empty() {
        None
    } else {
        let stats = timing_by_gated(&timing_samples)?;
        let timing_path = out.join("timing.csv");
        io::write_timing_csv(&timing_path, &stats)?;
        metric_paths.push(timing_path);
        Some(TimingSummary {
            samples: timing_samples.len(),
            slope_micros_per_landmark: stats.slope,
            intercept_micros: stats.intercept,
            quadratic_t: stats.quadratic_t,
            mean_micros_d_at_most_5: stats.mean_micros_at_most(5),
        })
    };

    let summary = EvaluationSummary {
        runs: n,
        steps_per_run: sss_series.timestamps.len(),
        rmse_csv_variant: "2d".to_string(),
        dr: mode_summary(&dr_series, &dr_cf2),
        sss: mode_summary(&sss_series, &sss_cf2),
        timing,
    };
    let summary_path = out.join("summary.json");
    io::write_summary_json(&summary_path, &summary)?;
    metric_paths.push(summary_path);

    for p in &metric_paths {
        let entry = util::manifest_path_for(&base, p);
        if !manifest.metrics.contains(&entry) {
            manifest.metrics.push(entry);
        }
    }
    manifest.save(manifest_path)?;

    log::info!(
        "evaluated {} runs: final 2-D RMSE dr {:.3} m, sss {:.3} m",
        n,
        summary.dr.final_rmse_2d,
        summary.sss.final_rmse_2d
    );
    Ok(EvaluateOutput { summary })
}
