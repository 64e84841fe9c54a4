//! File persistence: per-run truth CSVs, per-step estimate CSVs, the
//! landmark map as JSON, metrics CSVs, and the manifest tying a pipeline
//! together.
//!
//! All writes go through a temp file in the destination directory followed
//! by a rename, so a crashed or failed command never leaves a partial file
//! behind. Floats are written in Rust's shortest round-trip form; re-running
//! a pipeline with the same seed reproduces every byte (update wall times
//! excepted, since they measure the host, not the data).

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::{CfCurve, PositionSample, TimingStats};
use crate::filter::StepRecord;
use crate::geometry::{Landmark, LandmarkMap, VehicleState};
use crate::models::{ControlInput, Detection, DetectionSet};
use crate::simulator::{GroundTruthRun, TruthStep};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{}: {source}", path.display())]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{} line {line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("{}: {message}", path.display())]
    Schema { path: PathBuf, message: String },
    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("missing referenced file {}", path.display())]
    MissingFile { path: PathBuf },
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
}

impl IoError {
    fn file(path: &Path, source: std::io::Error) -> Self {
        Self::File {
            path: path.to_path_buf(),
            source,
        }
    }

    fn parse(path: &Path, line: u64, message: impl Into<String>) -> Self {
        Self::Parse {
            path: path.to_path_buf(),
            line,
            message: message.into(),
        }
    }

    fn schema(path: &Path, message: impl Into<String>) -> Self {
        Self::Schema {
            path: path.to_path_buf(),
            message: message.into(),
        }
    }
}

/// Fixed columns of a run CSV; each data row appends `L` flattened
/// `(z1, z2)` detection pairs.
pub const RUN_CSV_HEADER: [&str; 10] = [
    "t",
    "true_x",
    "true_y",
    "true_theta",
    "true_gamma",
    "u_s",
    "u_t",
    "y_c",
    "y_h",
    "L",
];

pub const ESTIMATE_CSV_HEADER: [&str; 19] = [
    "timestamp",
    "est_x",
    "est_y",
    "est_theta",
    "est_gamma",
    "cov_xx",
    "cov_xy",
    "cov_xtheta",
    "cov_xgamma",
    "cov_yy",
    "cov_ytheta",
    "cov_ygamma",
    "cov_thetatheta",
    "cov_thetagamma",
    "cov_gammagamma",
    "d_gated",
    "l_k",
    "ess",
    "update_micros",
];

/// Writes `bytes` to `path` via a uniquely named temp file in the same
/// directory plus an atomic rename. Creates missing parent directories.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&parent).map_err(|e| IoError::file(&parent, e))?;
    let tmp = tempfile::Builder::new()
        .prefix(".tmp-")
        .tempfile_in(&parent)
        .map_err(|e| IoError::file(path, e))?;
    fs::write(tmp.path(), bytes).map_err(|e| IoError::file(path, e))?;
    tmp.persist(path)
        .map_err(|e| IoError::file(path, e.error))?;
    Ok(())
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

fn csv_bytes(rows: Vec<Vec<String>>) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new()
        .flexible(true)
        .from_writer(Vec::new());
    for row in rows {
        w.write_record(&row).expect("writing to memory cannot fail");
    }
    w.into_inner().expect("writing to memory cannot fail")
}

struct CsvRows {
    path: PathBuf,
    records: Vec<(u64, csv::StringRecord)>,
}

/// Reads all records, validating the header against `expected`.
fn read_csv(path: &Path, expected: &[&str]) -> Result<CsvRows, IoError> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => {
                let msg = e.to_string();
                IoError::File {
                    path: path.to_path_buf(),
                    source: std::io::Error::other(msg),
                }
            }
            _ => IoError::Csv {
                path: path.to_path_buf(),
                source: e,
            },
        })?;
    let headers = rdr.headers().map_err(|e| IoError::Csv {
        path: path.to_path_buf(),
        source: e,
    })?;
    let got: Vec<&str> = headers.iter().take(expected.len()).collect();
    if got != expected {
        return Err(IoError::schema(
            path,
            format!("header {got:?} does not match the expected columns {expected:?}"),
        ));
    }
    let mut records = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| IoError::Csv {
            path: path.to_path_buf(),
            source: e,
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        records.push((line, rec));
    }
    Ok(CsvRows {
        path: path.to_path_buf(),
        records,
    })
}

impl CsvRows {
    fn f64_at(&self, rec: &csv::StringRecord, line: u64, idx: usize, name: &str) -> Result<f64, IoError> {
        let raw = rec
            .get(idx)
            .ok_or_else(|| IoError::parse(&self.path, line, format!("missing column {name}")))?;
        let v: f64 = raw
            .parse()
            .map_err(|_| IoError::parse(&self.path, line, format!("{name}: not a number: {raw:?}")))?;
        if !v.is_finite() {
            return Err(IoError::parse(
                &self.path,
                line,
                format!("{name}: non-finite value {raw:?}"),
            ));
        }
        Ok(v)
    }

    fn usize_at(&self, rec: &csv::StringRecord, line: u64, idx: usize, name: &str) -> Result<usize, IoError> {
        let raw = rec
            .get(idx)
            .ok_or_else(|| IoError::parse(&self.path, line, format!("missing column {name}")))?;
        raw.parse().map_err(|_| {
            IoError::parse(&self.path, line, format!("{name}: not a count: {raw:?}"))
        })
    }
}

/// Writes one simulated run: truth, controls, aux measurements, and the
/// flattened detection pairs.
pub fn write_run_csv(path: &Path, run: &GroundTruthRun) -> Result<(), IoError> {
    let mut rows = Vec::with_capacity(run.steps.len() + 1);
    rows.push(RUN_CSV_HEADER.iter().map(|s| s.to_string()).collect());
    for step in &run.steps {
        let mut row = vec![
            fmt(step.dets.timestamp),
            fmt(step.state.x),
            fmt(step.state.y),
            fmt(step.state.theta),
            fmt(step.state.gamma),
            fmt(step.control.speed),
            fmt(step.control.turn_rate),
            fmt(step.dets.heading_meas),
            fmt(step.dets.altitude_meas),
            step.dets.detections.len().to_string(),
        ];
        for d in &step.dets.detections {
            row.push(fmt(d.z1));
            row.push(fmt(d.z2));
        }
        rows.push(row);
    }
    write_atomic(path, &csv_bytes(rows))
}

/// Reads a run CSV back. The observation frequency is recomputed as the
/// fraction of pings carrying at least one detection; on replayed files the
/// detections' origins are unknown, so clutter counts toward it.
pub fn read_run_csv(path: &Path) -> Result<GroundTruthRun, IoError> {
    let rows = read_csv(path, &RUN_CSV_HEADER)?;
    let mut steps = Vec::with_capacity(rows.records.len());
    let mut observed = 0usize;
    for (line, rec) in &rows.records {
        let line = *line;
        let t = rows.f64_at(rec, line, 0, "t")?;
        let x = rows.f64_at(rec, line, 1, "true_x")?;
        let y = rows.f64_at(rec, line, 2, "true_y")?;
        let theta = rows.f64_at(rec, line, 3, "true_theta")?;
        let gamma = rows.f64_at(rec, line, 4, "true_gamma")?;
        let u_s = rows.f64_at(rec, line, 5, "u_s")?;
        let u_t = rows.f64_at(rec, line, 6, "u_t")?;
        let y_c = rows.f64_at(rec, line, 7, "y_c")?;
        let y_h = rows.f64_at(rec, line, 8, "y_h")?;
        let l = rows.usize_at(rec, line, 9, "L")?;
        if rec.len() != RUN_CSV_HEADER.len() + 2 * l {
            return Err(IoError::parse(
                &rows.path,
                line,
                format!(
                    "L = {l} promises {} fields, row has {}",
                    RUN_CSV_HEADER.len() + 2 * l,
                    rec.len()
                ),
            ));
        }
        let mut detections = Vec::with_capacity(l);
        for k in 0..l {
            let z1 = rows.f64_at(rec, line, 10 + 2 * k, "z1")?;
            let z2 = rows.f64_at(rec, line, 11 + 2 * k, "z2")?;
            detections.push(Detection::new(z1, z2));
        }
        if !detections.is_empty() {
            observed += 1;
        }
        steps.push(TruthStep {
            state: VehicleState { x, y, theta, gamma },
            control: ControlInput::new(u_s, u_t),
            dets: DetectionSet {
                timestamp: t,
                detections,
                heading_meas: y_c,
                altitude_meas: y_h,
            },
        });
    }
    let observation_frequency = if steps.is_empty() {
        0.0
    } else {
        observed as f64 / steps.len() as f64
    };
    Ok(GroundTruthRun {
        steps,
        observation_frequency,
    })
}

/// Upper triangle of a symmetric 4x4 matrix in row-major order.
pub fn cov_upper(m: &Matrix4<f64>) -> [f64; 10] {
    let mut out = [0.0; 10];
    let mut k = 0;
    for i in 0..4 {
        for j in i..4 {
            out[k] = m[(i, j)];
            k += 1;
        }
    }
    out
}

/// Symmetric 4x4 matrix from its row-major upper triangle.
pub fn cov_from_upper(u: &[f64; 10]) -> Matrix4<f64> {
    let mut m = Matrix4::zeros();
    let mut k = 0;
    for i in 0..4 {
        for j in i..4 {
            m[(i, j)] = u[k];
            m[(j, i)] = u[k];
            k += 1;
        }
    }
    m
}

/// One row of an estimate CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRow {
    pub t: f64,
    /// x, y, theta, gamma.
    pub mean: [f64; 4],
    /// Row-major upper triangle of the covariance.
    pub cov_upper: [f64; 10],
    pub d_gated: usize,
    pub l_k: usize,
    pub ess: f64,
    pub update_micros: f64,
}

impl EstimateRow {
    pub fn position_sample(&self) -> PositionSample {
        PositionSample {
            t: self.t,
            x: self.mean[0],
            y: self.mean[1],
            gamma: self.mean[3],
        }
    }

    pub fn covariance(&self) -> Matrix4<f64> {
        cov_from_upper(&self.cov_upper)
    }
}

/// Writes the per-step filter output of one run.
pub fn write_estimate_csv(path: &Path, records: &[StepRecord]) -> Result<(), IoError> {
    let mut rows = Vec::with_capacity(records.len() + 1);
    rows.push(ESTIMATE_CSV_HEADER.iter().map(|s| s.to_string()).collect());
    for r in records {
        let cov = cov_upper(&r.belief.cov);
        let mut row = Vec::with_capacity(ESTIMATE_CSV_HEADER.len());
        row.push(fmt(r.timestamp));
        for i in 0..4 {
            row.push(fmt(r.belief.mean[i]));
        }
        for c in cov {
            row.push(fmt(c));
        }
        row.push(r.diag.d_gated.to_string());
        row.push(r.diag.l_k.to_string());
        row.push(fmt(r.diag.ess));
        row.push(fmt(r.update_micros));
        rows.push(row);
    }
    write_atomic(path, &csv_bytes(rows))
}

pub fn read_estimate_csv(path: &Path) -> Result<Vec<EstimateRow>, IoError> {
    let rows = read_csv(path, &ESTIMATE_CSV_HEADER)?;
    let mut out = Vec::with_capacity(rows.records.len());
    for (line, rec) in &rows.records {
        let line = *line;
        if rec.len() != ESTIMATE_CSV_HEADER.len() {
            return Err(IoError::parse(
                &rows.path,
                line,
                format!(
                    "expected {} fields, row has {}",
                    ESTIMATE_CSV_HEADER.len(),
                    rec.len()
                ),
            ));
        }
        let t = rows.f64_at(rec, line, 0, "timestamp")?;
        let mut mean = [0.0; 4];
        for (i, m) in mean.iter_mut().enumerate() {
            *m = rows.f64_at(rec, line, 1 + i, ESTIMATE_CSV_HEADER[1 + i])?;
        }
        let mut cov = [0.0; 10];
        for (i, c) in cov.iter_mut().enumerate() {
            *c = rows.f64_at(rec, line, 5 + i, ESTIMATE_CSV_HEADER[5 + i])?;
        }
        let d_gated = rows.usize_at(rec, line, 15, "d_gated")?;
        let l_k = rows.usize_at(rec, line, 16, "l_k")?;
        let ess = rows.f64_at(rec, line, 17, "ess")?;
        let update_micros = rows.f64_at(rec, line, 18, "update_micros")?;
        out.push(EstimateRow {
            t,
            mean,
            cov_upper: cov,
            d_gated,
            l_k,
            ess,
            update_micros,
        });
    }
    Ok(out)
}

/// Writes the landmark map as a JSON array of `{id, x, y, theta, l, w}`.
pub fn write_map_json(path: &Path, map: &LandmarkMap) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(map.landmarks()).map_err(|e| IoError::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_map_json(path: &Path) -> Result<LandmarkMap, IoError> {
    let text = fs::read_to_string(path).map_err(|e| IoError::file(path, e))?;
    let landmarks: Vec<Landmark> = serde_json::from_str(&text).map_err(|e| IoError::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(LandmarkMap::new(landmarks)?)
}

/// Writes `rmse.csv` with columns `t,rmse_dr,rmse_sss`.
pub fn write_rmse_csv(
    path: &Path,
    timestamps: &[f64],
    rmse_dr: &[f64],
    rmse_sss: &[f64],
) -> Result<(), IoError> {
    assert!(
        timestamps.len() == rmse_dr.len() && timestamps.len() == rmse_sss.len(),
        "rmse series must share one time base"
    );
    let mut rows = Vec::with_capacity(timestamps.len() + 1);
    rows.push(vec!["t".to_string(), "rmse_dr".to_string(), "rmse_sss".to_string()]);
    for ((t, dr), sss) in timestamps.iter().zip(rmse_dr).zip(rmse_sss) {
        rows.push(vec![fmt(*t), fmt(*dr), fmt(*sss)]);
    }
    write_atomic(path, &csv_bytes(rows))
}

/// Writes `cf.csv` with columns `threshold,p_dr,p_sss`, sampling both curves
/// on one shared grid up to the larger maximum error.
pub fn write_cf_csv(
    path: &Path,
    dr: &CfCurve,
    sss: &CfCurve,
    points: usize,
) -> Result<(), IoError> {
    let points = points.max(2);
    let hi = dr.max_error().max(sss.max_error());
    let mut rows = Vec::with_capacity(points + 1);
    rows.push(vec![
        "threshold".to_string(),
        "p_dr".to_string(),
        "p_sss".to_string(),
    ]);
    for i in 0..points {
        let t = hi * i as f64 / (points - 1) as f64;
        rows.push(vec![
            fmt(t),
            fmt(dr.probability_below(t)),
            fmt(sss.probability_below(t)),
        ]);
    }
    write_atomic(path, &csv_bytes(rows))
}

/// Writes `timing.csv` with columns `d_gated,mean_micros,n`.
pub fn write_timing_csv(path: &Path, stats: &TimingStats) -> Result<(), IoError> {
    let mut rows = Vec::with_capacity(stats.buckets.len() + 1);
    rows.push(vec![
        "d_gated".to_string(),
        "mean_micros".to_string(),
        "n".to_string(),
    ]);
    for b in &stats.buckets {
        rows.push(vec![b.d_gated.to_string(), fmt(b.mean_micros), b.n.to_string()]);
    }
    write_atomic(path, &csv_bytes(rows))
}

/// Headline numbers for one filter mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    /// RMSE at the last step.
    pub final_rmse_2d: f64,
    pub final_rmse_3d: f64,
    /// Mean of the per-step 2-D RMSE over the whole run.
    pub mean_rmse_2d: f64,
    /// Fraction of pooled per-step 2-D errors at or below 5 m.
    pub p_below_5m_2d: f64,
}

/// Timing fit over all evaluated runs. Wall-clock derived, so excluded from
/// determinism comparisons.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingSummary {
    pub samples: usize,
    pub slope_micros_per_landmark: f64,
    pub intercept_micros: f64,
    pub quadratic_t: f64,
    pub mean_micros_d_at_most_5: Option<f64>,
}

/// JSON summary written next to the metrics CSVs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSummary {
    pub runs: usize,
    pub steps_per_run: usize,
    /// Which RMSE variant `rmse.csv` carries.
    pub rmse_csv_variant: String,
    pub dr: ModeSummary,
    pub sss: ModeSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timing: Option<TimingSummary>,
}

pub fn write_summary_json(path: &Path, summary: &EvaluationSummary) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(summary).map_err(|e| IoError::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_summary_json(path: &Path) -> Result<EvaluationSummary, IoError> {
    let text = fs::read_to_string(path).map_err(|e| IoError::file(path, e))?;
    serde_json::from_str(&text).map_err(|e| IoError::Json {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Ties one pipeline together: the hashed scenario config, the base seed,
/// and every file the pipeline has produced so far. Paths are relative to
/// the manifest's own directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_sha256: String,
    pub seed: u64,
    pub map: PathBuf,
    pub runs: Vec<PathBuf>,
    #[serde(default)]
    pub estimates: Vec<PathBuf>,
    #[serde(default)]
    pub metrics: Vec<PathBuf>,
}

impl RunManifest {
    pub fn new(config_bytes: &[u8], seed: u64) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_sha256: sha256_hex(config_bytes),
            seed,
            map: PathBuf::new(),
            runs: Vec::new(),
            estimates: Vec::new(),
            metrics: Vec::new(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), IoError> {
        let mut text = serde_json::to_string_pretty(self).map_err(|e| IoError::Json {
            path: path.to_path_buf(),
            source: e,
        })?;
        text.push('\n');
        write_atomic(path, text.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        let text = fs::read_to_string(path).map_err(|e| IoError::file(path, e))?;
        serde_json::from_str(&text).map_err(|e| IoError::Json {
            path: path.to_path_buf(),
            source: e,
        })
    }

    /// Checks that every referenced file exists under `base` (the
    /// manifest's directory); reports the first missing one.
    pub fn verify_files(&self, base: &Path) -> Result<(), IoError> {
        let all = std::iter::once(&self.map)
            .chain(&self.runs)
            .chain(&self.estimates)
            .chain(&self.metrics);
        for rel in all {
            let p = base.join(rel);
            if !p.is_file() {
                return Err(IoError::MissingFile { path: p });
            }
        }
        Ok(())
    }
}

/// Lowercase hex SHA-256 digest.
pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::{GaussianBelief, UpdateDiagnostics};
    use crate::geometry::Landmark;
    use nalgebra::Vector4;
    use tempfile::TempDir;

    fn sample_run() -> GroundTruthRun {
        let step = |t: f64, dets: Vec<Detection>| TruthStep {
            state: VehicleState {
                x: 1.5 * t,
                y: -0.25 * t,
                theta: 0.1,
                gamma: 5.0,
            },
            control: ControlInput::new(1.5, -0.05),
            dets: DetectionSet {
                timestamp: t,
                detections: dets,
                heading_meas: 0.11,
                altitude_meas: 4.9,
            },
        };
        GroundTruthRun {
            steps: vec![
                step(0.0, vec![]),
                step(1.0 / 3.0, vec![Detection::new(-7.25, -9.5)]),
                step(2.0 / 3.0, vec![Detection::new(6.0, 8.0), Detection::new(-3.0, -5.5)]),
            ],
            observation_frequency: 2.0 / 3.0,
        }
    }

    #[test]
    fn run_csv_round_trips_exactly() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("run_000.csv");
        let run = sample_run();
        write_run_csv(&path, &run).unwrap();
        let back = read_run_csv(&path).unwrap();
        assert_eq!(back.steps, run.steps);
        assert_eq!(back.observation_frequency, run.observation_frequency);
    }

    #[test]
    fn run_csv_bytes_are_reproducible() {
        let dir = TempDir::new().unwrap();
        let a = dir.path().join("a.csv");
        let b = dir.path().join("b.csv");
        let run = sample_run();
        write_run_csv(&a, &run).unwrap();
        write_run_csv(&b, &run).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
        let leftovers: Vec<_> = fs::read_dir(dir.path())
            .unwrap()
            .filter(|e| {
                e.as_ref()
                    .unwrap()
                    .file_name()
                    .to_string_lossy()
                    .starts_with(".tmp-")
            })
            .collect();
        assert!(leftovers.is_empty(), "temp files must not survive a write");
    }

    #[test]
    fn run_csv_rejects_inconsistent_detection_counts() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("bad.csv");
        let mut text = RUN_CSV_HEADER.join(",");
        text.push_str("\n0,0,0,0,5,1,0,0,5,2,1.0,2.0\n");
        fs::write(&path, text).unwrap();
        let err = read_run_csv(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2"), "got: {msg}");
        assert!(msg.contains("L = 2"), "got: {msg}");
    }

    #[test]
    fn run_csv_rejects_a_wrong_header() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("bad.csv");
        fs::write(&path, "a,b,c\n1,2,3\n").unwrap();
        assert!(matches!(
            read_run_csv(&path).unwrap_err(),
            IoError::Schema { .. }
        ));
    }

    fn sample_records() -> Vec<StepRecord> {
        let cov = Matrix4::from_fn(|i, j| if i == j { 0.5 + i as f64 } else { 0.01 });
        let belief = GaussianBelief::new(Vector4::new(1.0, -2.0, 0.3, 5.0), cov).unwrap();
        vec![StepRecord {
            timestamp: 0.25,
            belief,
            diag: UpdateDiagnostics {
                d_gated: 3,
                l_k: 2,
                ess: 512.5,
                bp: Default::default(),
                degenerate: false,
            },
            update_micros: 1234.5,
        }]
    }

    #[test]
    fn estimate_csv_round_trips_the_belief_and_diagnostics() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("est.csv");
        let records = sample_records();
        write_estimate_csv(&path, &records).unwrap();
        let rows = read_estimate_csv(&path).unwrap();
        assert_eq!(rows.len(), 1);
        let row = &rows[0];
        assert_eq!(row.t, 0.25);
        for i in 0..4 {
            assert_eq!(row.mean[i], records[0].belief.mean[i]);
        }
        assert_eq!(row.covariance(), records[0].belief.cov);
        assert_eq!(row.d_gated, 3);
        assert_eq!(row.l_k, 2);
        assert_eq!(row.ess, 512.5);
        assert_eq!(row.update_micros, 1234.5);
        let p = row.position_sample();
        assert_eq!((p.t, p.x, p.y, p.gamma), (0.25, 1.0, -2.0, 5.0));
    }

    #[test]
    fn cov_upper_triangle_round_trips() {
        let m = Matrix4::from_fn(|i, j| 1.0 + (i + j) as f64 + 0.1 * (i * j) as f64);
        let sym = 0.5 * (m + m.transpose());
        assert_eq!(cov_from_upper(&cov_upper(&sym)), sym);
    }

    #[test]
    fn map_json_round_trips_with_short_extent_keys() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("map.json");
        let map = LandmarkMap::new(vec![
            Landmark::new(0, 1.0, 2.0, 0.5, 2.0, 1.0).unwrap(),
            Landmark::new(1, -3.0, 4.0, -0.25, 1.5, 0.5).unwrap(),
        ])
        .unwrap();
        write_map_json(&path, &map).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"l\":"), "length serializes as l");
        assert!(text.contains("\"w\":"), "width serializes as w");
        let back = read_map_json(&path).unwrap();
        assert_eq!(back.landmarks(), map.landmarks());
    }

    #[test]
    fn map_json_read_rejects_duplicate_ids() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("map.json");
        let text = r#"[{"id":1,"x":0,"y":0,"theta":0,"l":2,"w":1},
                       {"id":1,"x":5,"y":0,"theta":0,"l":2,"w":1}]"#;
        fs::write(&path, text).unwrap();
        assert!(matches!(
            read_map_json(&path).unwrap_err(),
            IoError::Geometry(_)
        ));
    }

    #[test]
    fn metrics_csvs_have_the_documented_columns() {
        let dir = TempDir::new().unwrap();
        let rmse = dir.path().join("rmse.csv");
        write_rmse_csv(&rmse, &[0.0, 1.0], &[0.5, 1.5], &[0.25, 0.5]).unwrap();
        assert_eq!(
            fs::read_to_string(&rmse).unwrap(),
            "t,rmse_dr,rmse_sss\n0,0.5,0.25\n1,1.5,0.5\n"
        );

        let cf = dir.path().join("cf.csv");
        let dr = CfCurve::from_errors(vec![1.0, 2.0]).unwrap();
        let sss = CfCurve::from_errors(vec![0.5, 1.0]).unwrap();
        write_cf_csv(&cf, &dr, &sss, 3).unwrap();
        assert_eq!(
            fs::read_to_string(&cf).unwrap(),
            "threshold,p_dr,p_sss\n0,0,0\n1,0.5,1\n2,1,1\n"
        );

        let timing = dir.path().join("timing.csv");
        let stats = crate::evaluation::timing_by_gated(&[(0, 10.0), (0, 12.0), (2, 20.0)]).unwrap();
        write_timing_csv(&timing, &stats).unwrap();
        assert_eq!(
            fs::read_to_string(&timing).unwrap(),
            "d_gated,mean_micros,n\n0,11,2\n2,20,1\n"
        );
    }

    #[test]
    fn summary_json_round_trips() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("summary.json");
        let summary = EvaluationSummary {
            runs: 300,
            steps_per_run: 18000,
            rmse_csv_variant: "2d".to_string(),
            dr: ModeSummary {
                final_rmse_2d: 3.1,
                final_rmse_3d: 3.2,
                mean_rmse_2d: 1.8,
                p_below_5m_2d: 0.93,
            },
            sss: ModeSummary {
                final_rmse_2d: 0.5,
                final_rmse_3d: 0.6,
                mean_rmse_2d: 0.45,
                p_below_5m_2d: 1.0,
            },
            timing: None,
        };
        write_summary_json(&path, &summary).unwrap();
        assert_eq!(read_summary_json(&path).unwrap(), summary);
    }

    #[test]
    fn manifest_round_trips_and_verifies_files() {
        let dir = TempDir::new().unwrap();
        let mut manifest = RunManifest::new(b"[scenario]\nseed = 7\n", 7);
        manifest.map = PathBuf::from("map.json");
        manifest.runs = vec![PathBuf::from("runs/run_000.csv")];
        assert_eq!(manifest.config_sha256.len(), 64);
        assert_eq!(manifest.seed, 7);

        let path = dir.path().join("manifest.json");
        manifest.save(&path).unwrap();
        let back = RunManifest::load(&path).unwrap();
        assert_eq!(back, manifest);

        let err = back.verify_files(dir.path()).unwrap_err();
        assert!(err.to_string().contains("map.json"));

        write_map_json(
            &dir.path().join("map.json"),
            &LandmarkMap::new(vec![]).unwrap(),
        )
        .unwrap();
        write_run_csv(&dir.path().join("runs/run_000.csv"), &sample_run()).unwrap();
        back.verify_files(dir.path()).unwrap();
    }

    #[test]
    fn sha256_matches_a_known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn atomic_write_creates_parents_and_overwrites() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("a/b/c.txt");
        write_atomic(&path, b"first").unwrap();
        write_atomic(&path, b"second").unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "second");
    }
}
