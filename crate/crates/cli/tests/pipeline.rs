use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sssnav_core::config::{presets, PipelineConfig};
use sssnav_core::io::{read_summary_json, RunManifest};

const BIN: &str = env!("CARGO_BIN_EXE_sssnav");

/// Small scenario: 12 s at 30 Hz over a 9 x 9 grid, 300 particles.
const TINY: &str = r#"
[scenario]
duration = 12.0
seed = 11

[scenario.layout]
kind = "grid"
spacing = 25.0
extent = 100.0

[scenario.policy]
kind = "random-turn"

[scenario.driving]
sigma_s = 0.7
sigma_t = 1e-4
sigma_theta = 1e-4
sigma_gamma = 0.01

[scenario.measurement]
sigma_d = 0.75
sigma_h = 0.25
sigma_c = 0.1
p_det = 0.95
mu_c = 0.01
r_max = 20.0

[filter]
particle_count = 300
"#;

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .canonicalize()
        .unwrap()
}

fn sssnav(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .output()
        .expect("binary runs")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}, stderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Estimate CSV with the wall-clock column dropped; everything else is
/// covered by the byte-determinism contract.
fn masked_estimate(path: &Path) -> String {
    let text = fs::read_to_string(path).unwrap();
    text.lines()
        .map(|l| l.rsplit_once(',').unwrap().0)
        .collect::<Vec<_>>()
        .join("\n")
}

fn setup(dir: &Path) -> (PathBuf, PathBuf) {
    let cfg = dir.join("cfg.toml");
    fs::write(&cfg, TINY).unwrap();
    (cfg, dir.join("exp"))
}

#[test]
fn bundled_configs_match_presets() {
    let configs = workspace_root().join("configs");
    for (name, preset) in [
        ("sim_baseline", presets::sim_baseline(7)),
        ("hydrone", presets::hydrone(7)),
        ("iver3", presets::iver3(7)),
    ] {
        let (cfg, _) = PipelineConfig::load(&configs.join(format!("{name}.toml"))).unwrap();
        assert_eq!(cfg, preset, "{name}.toml drifted from its preset");
    }
}

#[test]
fn pipeline_round_trip_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (cfg, exp) = setup(tmp.path());
    let manifest = exp.join("manifest.json");

    assert_ok(&sssnav(&[
        "simulate",
        "--config",
        path_str(&cfg),
        "--out",
        path_str(&exp),
        "--runs",
        "2",
    ]));
    for out in ["est_a", "est_b"] {
        assert_ok(&sssnav(&[
            "filter",
            "--config",
            path_str(&cfg),
            "--manifest",
            path_str(&manifest),
            "--out",
            path_str(&exp.join(out)),
        ]));
    }
    assert_ok(&sssnav(&[
        "filter",
        "--config",
        path_str(&cfg),
        "--manifest",
        path_str(&manifest),
        "--out",
        path_str(&exp.join("est_dr")),
        "--mode",
        "dr",
    ]));
    assert_ok(&sssnav(&[
        "evaluate",
        "--manifest",
        path_str(&manifest),
        "--sss",
        path_str(&exp.join("est_a")),
        "--dr",
        path_str(&exp.join("est_dr")),
        "--out",
        path_str(&exp.join("metrics")),
    ]));

    // Same seed, same estimates, timing column aside.
    for run in ["run_000", "run_001"] {
        assert_eq!(
            masked_estimate(&exp.join("est_a").join(format!("{run}.est.csv"))),
            masked_estimate(&exp.join("est_b").join(format!("{run}.est.csv"))),
            "{run} differs between identical filter invocations"
        );
    }

    // A fresh simulate with the same config is byte-identical.
    let exp2 = tmp.path().join("exp2");
    assert_ok(&sssnav(&[
        "simulate",
        "--config",
        path_str(&cfg),
        "--out",
        path_str(&exp2),
        "--runs",
        "2",
    ]));
    for rel in ["map.json", "runs/run_000.csv", "runs/run_001.csv"] {
        assert_eq!(
            fs::read(exp.join(rel)).unwrap(),
            fs::read(exp2.join(rel)).unwrap(),
            "{rel} differs between identical simulate invocations"
        );
    }

    // The manifest accumulated estimate and metric paths that exist.
    let m = RunManifest::load(&manifest).unwrap();
    assert_eq!(m.runs.len(), 2);
    assert!(!m.estimates.is_empty());
    assert_eq!(m.metrics.len(), 4, "rmse, cf, timing, summary");
    m.verify_files(&exp).unwrap();

    let summary = read_summary_json(&exp.join("metrics/summary.json")).unwrap();
    assert_eq!(summary.runs, 2);
    assert!(summary.timing.is_some());
}

#[test]
fn malformed_config_exits_nonzero_without_output() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "[scenario]\nduration = \"fast\"\n").unwrap();
    let exp = tmp.path().join("exp");
    let out = sssnav(&[
        "simulate",
        "--config",
        path_str(&cfg),
        "--out",
        path_str(&exp),
    ]);
    assert!(!out.status.success());
    assert!(!exp.exists(), "failed simulate must not leave output behind");
}

#[test]
fn dr_estimates_ignore_detection_columns() {
    let tmp = tempfile::tempdir().unwrap();
    let (cfg, exp) = setup(tmp.path());
    assert_ok(&sssnav(&[
        "simulate",
        "--config",
        path_str(&cfg),
        "--out",
        path_str(&exp),
        "--runs",
        "1",
    ]));

    // Same run with every detection removed: truncate rows to the fixed
    // columns and zero the detection count.
    let original = exp.join("runs/run_000.csv");
    let stripped_dir = tmp.path().join("stripped");
    fs::create_dir(&stripped_dir).unwrap();
    let stripped = stripped_dir.join("run_000.csv");
    let text = fs::read_to_string(&original).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().to_string();
    let mut out_text = header;
    for line in lines {
        let fixed: Vec<&str> = line.split(',').take(9).collect();
        out_text.push('\n');
        out_text.push_str(&fixed.join(","));
        out_text.push_str(",0");
    }
    out_text.push('\n');
    fs::write(&stripped, out_text).unwrap();

    for (run, out) in [(&original, "dr_a"), (&stripped, "dr_b")] {
        assert_ok(&sssnav(&[
            "filter",
            "--config",
            path_str(&cfg),
            "--map",
            path_str(&exp.join("map.json")),
            "--out",
            path_str(&tmp.path().join(out)),
            "--mode",
            "dr",
            path_str(run),
        ]));
    }
    assert_eq!(
        masked_estimate(&tmp.path().join("dr_a/run_000.est.csv")),
        masked_estimate(&tmp.path().join("dr_b/run_000.est.csv")),
        "dead reckoning must not depend on detections"
    );
}

#[test]
fn self_evaluation_is_exactly_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let (cfg, exp) = setup(tmp.path());
    assert_ok(&sssnav(&[
        "simulate",
        "--config",
        path_str(&cfg),
        "--out",
        path_str(&exp),
        "--runs",
        "2",
    ]));
    let runs = exp.join("runs");
    assert_ok(&sssnav(&[
        "evaluate",
        "--manifest",
        path_str(&exp.join("manifest.json")),
        "--sss",
        path_str(&runs),
        "--dr",
        path_str(&runs),
        "--out",
        path_str(&exp.join("self")),
    ]));
    let summary = read_summary_json(&exp.join("self/summary.json")).unwrap();
    assert_eq!(summary.sss.final_rmse_2d, 0.0);
    assert_eq!(summary.sss.mean_rmse_2d, 0.0);
    assert_eq!(summary.dr.final_rmse_3d, 0.0);
    assert!(summary.timing.is_none(), "truth tracks carry no timing");
}

#[test]
fn evaluate_reports_missing_files_by_path() {
    let tmp = tempfile::tempdir().unwrap();
    let (cfg, exp) = setup(tmp.path());
    assert_ok(&sssnav(&[
        "simulate",
        "--config",
        path_str(&cfg),
        "--out",
        path_str(&exp),
        "--runs",
        "2",
    ]));
    fs::remove_file(exp.join("runs/run_001.csv")).unwrap();
    let out = sssnav(&[
        "evaluate",
        "--manifest",
        path_str(&exp.join("manifest.json")),
        "--sss",
        path_str(&exp.join("runs")),
        "--dr",
        path_str(&exp.join("runs")),
        "--out",
        path_str(&exp.join("metrics")),
    ]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("run_001.csv"),
        "error must name the missing file, got:\n{stderr}"
    );
}

#[test]
fn exact_assoc_mode_runs_on_small_scenes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.toml");
    fs::write(
        &cfg,
        r#"
[scenario]
duration = 10.0
seed = 3

[scenario.layout]
kind = "explicit"

[[scenario.layout.landmarks]]
id = 0
x = 12.0
y = 0.0
theta = 0.0
l = 2.0
w = 1.0

[scenario.policy]
kind = "random-turn"

[scenario.driving]
sigma_s = 0.7
sigma_t = 1e-4
sigma_theta = 1e-4
sigma_gamma = 0.01

[scenario.measurement]
sigma_d = 0.75
sigma_h = 0.25
sigma_c = 0.1
p_det = 0.95
mu_c = 0.01
r_max = 20.0

[filter]
particle_count = 300
"#,
    )
    .unwrap();
    let exp = tmp.path().join("exp");
    assert_ok(&sssnav(&[
        "simulate",
        "--config",
        path_str(&cfg),
        "--out",
        path_str(&exp),
        "--runs",
        "1",
    ]));
    assert_ok(&sssnav(&[
        "filter",
        "--config",
        path_str(&cfg),
        "--manifest",
        path_str(&exp.join("manifest.json")),
        "--out",
        path_str(&exp.join("est_exact")),
        "--mode",
        "exact-assoc",
    ]));
    assert!(exp.join("est_exact/run_000.est.csv").is_file());
}

#[test]
fn sweep_writes_per_spacing_pipelines_and_a_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let (cfg, out) = setup(tmp.path());
    assert_ok(&sssnav(&[
        "sweep",
        "--config",
        path_str(&cfg),
        "--out",
        path_str(&out),
        "--spacings",
        "50,none",
        "--runs",
        "1",
    ]));
    for sub in ["spacing_50", "spacing_none"] {
        for rel in [
            "manifest.json",
            "runs/run_000.csv",
            "est_sss/run_000.est.csv",
            "est_dr/run_000.est.csv",
            "metrics/summary.json",
        ] {
            assert!(out.join(sub).join(rel).is_file(), "{sub}/{rel} missing");
        }
    }
    let rows: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("sweep_summary.json")).unwrap())
            .unwrap();
    let rows = rows.as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0]["spacing"].as_f64(), Some(50.0));
    assert!(rows[1]["spacing"].is_null(), "no spacing for the empty map");
    assert_eq!(rows[1]["observation_frequency"].as_f64(), Some(0.0));
}
