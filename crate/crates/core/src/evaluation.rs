//! Run metrics: RMSE versus time aggregated across runs, cumulative error
//! frequency curves, and update-timing statistics versus gated landmark
//! count.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::filter::StepRecord;
use crate::simulator::GroundTruthRun;

#[derive(Debug, Error)]
pub enum EvaluationError {
    #[error("misaligned series: {0}")]
    MisalignedSeries(String),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// Timestamps from different files must agree to this tolerance to count as
/// the same step.
pub const TIMESTAMP_TOLERANCE: f64 = 1e-9;

/// One position sample; altitude rides along for the 3-D error variant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionSample {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub gamma: f64,
}

/// Estimate means of a filtered run as position samples.
pub fn estimate_samples(records: &[StepRecord]) -> Vec<PositionSample> {
    records
        .iter()
        .map(|r| PositionSample {
            t: r.timestamp,
            x: r.belief.mean[0],
            y: r.belief.mean[1],
            gamma: r.belief.mean[3],
        })
        .collect()
}

/// True states of a simulated run as position samples.
pub fn truth_samples(run: &GroundTruthRun) -> Vec<PositionSample> {
    run.steps
        .iter()
        .map(|s| PositionSample {
            t: s.dets.timestamp,
            x: s.state.x,
            y: s.state.y,
            gamma: s.state.gamma,
        })
        .collect()
}

/// Per-step update timing paired with the gated landmark count.
pub fn timing_samples(records: &[StepRecord]) -> Vec<(usize, f64)> {
    records
        .iter()
        .map(|r| (r.diag.d_gated, r.update_micros))
        .collect()
}

/// Position errors per run and per step, with the across-run RMSE series.
///
/// Both the planar (x, y) and the 3-D (x, y, altitude) variants are kept;
/// consumers state which one they report.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSeries {
    pub timestamps: Vec<f64>,
    /// `errors_2d[run][step]`
    pub errors_2d: Vec<Vec<f64>>,
    pub errors_3d: Vec<Vec<f64>>,
    /// `rmse_2d[step]` = sqrt(mean over runs of squared 2-D error)
    pub rmse_2d: Vec<f64>,
    pub rmse_3d: Vec<f64>,
}

impl ErrorSeries {
    pub fn run_count(&self) -> usize {
        self.errors_2d.len()
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    /// Mean of the 2-D RMSE series over `t0 <= t <= t1`; None when the
    /// window contains no steps.
    pub fn window_mean_2d(&self, t0: f64, t1: f64) -> Option<f64> {
        let mut sum = 0.0;
        let mut n = 0usize;
        for (t, r) in self.timestamps.iter().zip(&self.rmse_2d) {
            if (t0..=t1).contains(t) {
                sum += r;
                n += 1;
            }
        }
        (n > 0).then(|| sum / n as f64)
    }

    /// All 2-D errors across runs and steps, pooled for CF curves.
    pub fn pooled_2d(&self) -> Vec<f64> {
        self.errors_2d.iter().flatten().copied().collect()
    }

    pub fn pooled_3d(&self) -> Vec<f64> {
        self.errors_3d.iter().flatten().copied().collect()
    }
}

/// Per-step position errors and across-run RMSE for aligned estimate/truth
/// series. Every run must share one time base.
pub fn rmse_series(
    estimates: &[Vec<PositionSample>],
    truths: &[Vec<PositionSample>],
) -> Result<ErrorSeries, EvaluationError> {
    if estimates.is_empty() {
        return Err(EvaluationError::Empty("no runs".to_string()));
    }
    if estimates.len() != truths.len() {
        return Err(EvaluationError::MisalignedSeries(format!(
            "{} estimate runs vs {} truth runs",
            estimates.len(),
            truths.len()
        )));
    }
    let base: Vec<f64> = truths[0].iter().map(|s| s.t).collect();
    if base.is_empty() {
        return Err(EvaluationError::Empty("zero-length runs".to_string()));
    }
    let steps = base.len();
    let mut errors_2d = Vec::with_capacity(estimates.len());
    let mut errors_3d = Vec::with_capacity(estimates.len());
    for (run, (est, truth)) in estimates.iter().zip(truths).enumerate() {
        if est.len() != steps || truth.len() != steps {
            return Err(EvaluationError::MisalignedSeries(format!(
                "run {run}: {} estimate steps, {} truth steps, expected {steps}",
                est.len(),
                truth.len()
            )));
        }
        let mut e2 = Vec::with_capacity(steps);
        let mut e3 = Vec::with_capacity(steps);
        for (k, (e, t)) in est.iter().zip(truth).enumerate() {
            if (e.t - t.t).abs() > TIMESTAMP_TOLERANCE || (t.t - base[k]).abs() > TIMESTAMP_TOLERANCE
            {
                return Err(EvaluationError::MisalignedSeries(format!(
                    "run {run} step {k}: timestamps {} / {} do not match the base {}",
                    e.t, t.t, base[k]
                )));
            }
            let dx = e.x - t.x;
            let dy = e.y - t.y;
            let dg = e.gamma - t.gamma;
            let sq2 = dx * dx + dy * dy;
            e2.push(sq2.sqrt());
            e3.push((sq2 + dg * dg).sqrt());
        }
        errors_2d.push(e2);
        errors_3d.push(e3);
    }
    let runs = estimates.len() as f64;
    let rmse_of = |errors: &[Vec<f64>]| {
        (0..steps)
            .map(|k| {
                let ss: f64 = errors.iter().map(|run| run[k] * run[k]).sum();
                (ss / runs).sqrt()
            })
            .collect::<Vec<f64>>()
    };
    let rmse_2d = rmse_of(&errors_2d);
    let rmse_3d = rmse_of(&errors_3d);
    Ok(ErrorSeries {
        timestamps: base,
        errors_2d,
        errors_3d,
        rmse_2d,
        rmse_3d,
    })
}

/// Empirical cumulative distribution of pooled per-step errors.
#[derive(Debug, Clone, PartialEq)]
pub struct CfCurve {
    // Sorted ascending.
    errors: Vec<f64>,
}

impl CfCurve {
    pub fn from_errors(mut errors: Vec<f64>) -> Result<Self, EvaluationError> {
        if errors.is_empty() {
            return Err(EvaluationError::Empty("no errors".to_string()));
        }
        if errors.iter().any(|e| !e.is_finite() || *e < 0.0) {
            return Err(EvaluationError::InvalidInput(
                "errors must be finite and non-negative".to_string(),
            ));
        }
        errors.sort_by(f64::total_cmp);
        Ok(Self { errors })
    }

    pub fn len(&self) -> usize {
        self.errors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.errors.is_empty()
    }

    /// P(error <= threshold), right-continuous in the threshold.
    pub fn probability_below(&self, threshold: f64) -> f64 {
        let k = self.errors.partition_point(|e| *e <= threshold);
        k as f64 / self.errors.len() as f64
    }

    /// Smallest error e with P(error <= e) >= q.
    pub fn quantile(&self, q: f64) -> f64 {
        let n = self.errors.len();
        let idx = ((q * n as f64).ceil() as usize).clamp(1, n) - 1;
        self.errors[idx]
    }

    pub fn max_error(&self) -> f64 {
        *self.errors.last().expect("curve is nonempty")
    }

    /// Evenly spaced (threshold, probability) rows from 0 to the largest
    /// error, for CSV export.
    pub fn grid(&self, points: usize) -> Vec<(f64, f64)> {
        let points = points.max(2);
        let hi = self.max_error();
        (0..points)
            .map(|i| {
                let t = hi * i as f64 / (points - 1) as f64;
                (t, self.probability_below(t))
            })
            .collect()
    }
}

/// Pooled cumulative frequency curves (2-D and 3-D) of an error series.
pub fn cf_curve(series: &ErrorSeries) -> Result<(CfCurve, CfCurve), EvaluationError> {
    Ok((
        CfCurve::from_errors(series.pooled_2d())?,
        CfCurve::from_errors(series.pooled_3d())?,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingBucket {
    pub d_gated: usize,
    pub mean_micros: f64,
    pub n: usize,
}

/// Update timing bucketed by gated landmark count, with a least-squares
/// line over the raw samples and a curvature check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    pub buckets: Vec<TimingBucket>,
    /// Microseconds per additional gated landmark.
    pub slope: f64,
    pub intercept: f64,
    /// t statistic of a quadratic term added to the linear fit; magnitudes
    /// under ~2 mean no significant curvature.
    pub quadratic_t: f64,
}

impl TimingStats {
    pub fn mean_micros_at_most(&self, d_max: usize) -> Option<f64> {
        let mut sum = 0.0;
        let mut n = 0usize;
        for b in &self.buckets {
            if b.d_gated <= d_max {
                sum += b.mean_micros * b.n as f64;
                n += b.n;
            }
        }
        (n > 0).then(|| sum / n as f64)
    }
}

/// Buckets update durations by gated landmark count and fits time against
/// the count.
pub fn timing_by_gated(samples: &[(usize, f64)]) -> Result<TimingStats, EvaluationError> {
    if samples.is_empty() {
        return Err(EvaluationError::Empty("no timing samples".to_string()));
    }
    if samples.iter().any(|(_, y)| !(*y > 0.0) || !y.is_finite()) {
        return Err(EvaluationError::InvalidInput(
            "durations must be positive and finite".to_string(),
        ));
    }
    let mut by_d: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for (d, y) in samples {
        let e = by_d.entry(*d).or_insert((0.0, 0));
        e.0 += *y;
        e.1 += 1;
    }
    let buckets: Vec<TimingBucket> = by_d
        .iter()
        .map(|(d, (sum, n))| TimingBucket {
            d_gated: *d,
            mean_micros: sum / *n as f64,
            n: *n,
        })
        .collect();

    let n = samples.len() as f64;
    let d_mean = samples.iter().map(|(d, _)| *d as f64).sum::<f64>() / n;
    let y_mean = samples.iter().map(|(_, y)| *y).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (d, y) in samples {
        let zd = *d as f64 - d_mean;
        sxx += zd * zd;
        sxy += zd * (y - y_mean);
    }
    let (slope, intercept) = if sxx > 0.0 {
        let b = sxy / sxx;
        (b, y_mean - b * d_mean)
    } else {
        (0.0, y_mean)
    };

    let quadratic_t = quadratic_t_statistic(samples, d_mean, by_d.len());
    Ok(TimingStats {
        buckets,
        slope,
        intercept,
        quadratic_t,
    })
}

/// t statistic of the quadratic coefficient in y ~ 1 + z + z^2 with
/// z = d - mean(d). Zero when the data cannot support the fit.
fn quadratic_t_statistic(samples: &[(usize, f64)], d_mean: f64, distinct: usize) -> f64 {
    let n = samples.len();
    if distinct < 3 || n < 4 {
        return 0.0;
    }
    let mut xtx = Matrix3::zeros();
    let mut xty = Vector3::zeros();
    let mut yy = 0.0;
    for (d, y) in samples {
        let z = *d as f64 - d_mean;
        let row = Vector3::new(1.0, z, z * z);
        xtx += row * row.transpose();
        xty += row * *y;
        yy += y * y;
    }
    let Some(inv) = xtx.try_inverse() else {
        return 0.0;
    };
    let beta = inv * xty;
    let rss = (yy - beta.dot(&xty)).max(0.0);
    let c = beta[2];
    let dof = n as f64 - 3.0;
    let scale = yy.max(1.0);
    if rss <= 1e-12 * scale {
        // Exact fit: curvature is either absent or unambiguous.
        return if c.abs() <= 1e-9 * (1.0 + beta[0].abs()) {
            0.0
        } else {
            f64::INFINITY
        };
    }
    let var_c = rss / dof * inv[(2, 2)];
    if var_c <= 0.0 {
        return 0.0;
    }
    c / var_c.sqrt()
}

/// Means of `values` over consecutive windows of `window` seconds, starting
/// at the first timestamp. Used for trend checks on RMSE series.
pub fn window_means(
    timestamps: &[f64],
    values: &[f64],
    window: f64,
) -> Result<Vec<f64>, EvaluationError> {
    if timestamps.is_empty() || timestamps.len() != values.len() {
        return Err(EvaluationError::MisalignedSeries(format!(
            "{} timestamps vs {} values",
            timestamps.len(),
            values.len()
        )));
    }
    if !(window > 0.0) || !window.is_finite() {
        return Err(EvaluationError::InvalidInput(format!(
            "window must be positive, got {window}"
        )));
    }
    let t0 = timestamps[0];
    let mut sums: Vec<(f64, usize)> = Vec::new();
    for (t, v) in timestamps.iter().zip(values) {
        let idx = ((t - t0) / window).floor() as usize;
        if idx >= sums.len() {
            sums.resize(idx + 1, (0.0, 0));
        }
        sums[idx].0 += v;
        sums[idx].1 += 1;
    }
    Ok(sums
        .into_iter()
        .filter(|(_, n)| *n > 0)
        .map(|(s, n)| s / n as f64)
        .collect())
}
