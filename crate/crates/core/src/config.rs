//! Pipeline configuration: one TOML file describes the simulated scenario
//! and the filter running on it, plus shipped vehicle presets.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::filter::{FilterConfig, FilterMode};
use crate::models::{DrivingNoiseParams, MeasurementNoiseParams};
use crate::simulator::{ControlPolicy, LandmarkLayout, ScenarioConfig, SimulatorError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{}: {source}", path.display())]
    Read {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// The TOML error's display carries line and column context.
    #[error("{context}: {source}")]
    Parse {
        context: String,
        #[source]
        source: Box<toml::de::Error>,
    },
    #[error(transparent)]
    Scenario(#[from] SimulatorError),
    #[error(transparent)]
    Filter(#[from] crate::filter::FilterError),
}

/// Filter knobs; anything left unset falls back to the scenario's values or
/// the filter defaults. A separate `driving` here lets the filter model more
/// process noise than the simulator injects, which is how unmodeled
/// disturbances like surface current are absorbed.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterSection {
    pub particle_count: Option<usize>,
    pub gamma_gate: Option<f64>,
    pub mode: Option<FilterMode>,
    pub driving: Option<DrivingNoiseParams>,
    pub measurement: Option<MeasurementNoiseParams>,
}

/// Everything one pipeline needs: the scenario to simulate and the filter
/// to run on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub filter: FilterSection,
}

impl PipelineConfig {
    /// Parses and validates; `context` names the source in errors.
    pub fn from_toml_str(text: &str, context: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse {
            context: context.to_string(),
            source: Box::new(e),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file, returning the parsed config and the raw text
    /// (the manifest hashes the exact bytes on disk).
    pub fn load(path: &Path) -> Result<(Self, String), ConfigError> {
        let text = fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.to_path_buf(),
            source: e,
        })?;
        let cfg = Self::from_toml_str(&text, &path.display().to_string())?;
        Ok((cfg, text))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.scenario.validate()?;
        self.filter_config(self.scenario.seed).validate()?;
        Ok(())
    }

    /// Filter configuration for one run. The caller passes the per-run
    /// derived seed.
    pub fn filter_config(&self, seed: u64) -> FilterConfig {
        let mut fc = FilterConfig::new(
            self.filter.driving.unwrap_or(self.scenario.driving),
            self.filter
                .measurement
                .clone()
                .unwrap_or_else(|| self.scenario.measurement.clone()),
            seed,
        );
        if let Some(n) = self.filter.particle_count {
            fc.particle_count = n;
        }
        if let Some(g) = self.filter.gamma_gate {
            fc.gamma_gate = g;
        }
        if let Some(m) = self.filter.mode {
            fc.mode = m;
        }
        fc
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("a validated config serializes")
    }
}

/// Shipped parameter sets. The two vehicle presets carry field-estimated
/// sensor and slack values; the baseline preset is the calibrated synthetic
/// scenario the bundled experiments build on.
pub mod presets {
    use super::*;

    /// Surface-vehicle driving-noise slack, estimated from field data. The
    /// large heading term absorbs surface current and wave action that the
    /// motion model does not represent.
    pub fn hydrone_driving() -> DrivingNoiseParams {
        DrivingNoiseParams {
            sigma_s: 0.1,
            sigma_t: 0.1,
            sigma_theta: 1.5,
            sigma_gamma: 0.25,
        }
    }

    pub fn hydrone_measurement() -> MeasurementNoiseParams {
        MeasurementNoiseParams {
            sigma_d: 0.75,
            sigma_h: 0.25,
            sigma_c: 0.1,
            p_det: 0.95,
            mu_c: 0.01,
            r_max: 20.0,
            clutter_model: Default::default(),
            sigma_d_overrides: Default::default(),
        }
    }

    /// Underwater-vehicle driving-noise slack, estimated from field data.
    pub fn iver3_driving() -> DrivingNoiseParams {
        DrivingNoiseParams {
            sigma_s: 0.2,
            sigma_t: 0.5,
            sigma_theta: 1.5,
            sigma_gamma: 1.5,
        }
    }

    pub fn iver3_measurement() -> MeasurementNoiseParams {
        MeasurementNoiseParams {
            sigma_d: 1.0,
            r_max: 30.0,
            ..hydrone_measurement()
        }
    }

    /// True process noise injected by the baseline simulations. Speed noise
    /// dominates so dead reckoning drifts a few meters over ten minutes;
    /// heading noise is kept small because the compass pins heading in the
    /// full filter and the two modes must share their along-track error.
    pub fn baseline_driving() -> DrivingNoiseParams {
        DrivingNoiseParams {
            sigma_s: 0.7,
            sigma_t: 1e-4,
            sigma_theta: 1e-4,
            sigma_gamma: 0.01,
        }
    }

    /// Calibrated synthetic baseline: dense grid, no current, ten minutes
    /// at 30 Hz. Landmark spacing 25 m yields a landmark-observation
    /// probability near 10 percent.
    pub fn sim_baseline(seed: u64) -> PipelineConfig {
        PipelineConfig {
            scenario: ScenarioConfig {
                layout: LandmarkLayout::Grid {
                    spacing: 25.0,
                    extent: 400.0,
                    length: 2.0,
                    width: 1.0,
                },
                duration: 600.0,
                ping_rate: 30.0,
                policy: ControlPolicy::random_turn(),
                current_mean: 0.0,
                current_std: 0.0,
                driving: baseline_driving(),
                measurement: hydrone_measurement(),
                start: crate::geometry::VehicleState::new(0.0, 0.0, 0.0, 5.0),
                seed,
            },
            filter: FilterSection::default(),
        }
    }

    /// Surface-vehicle scenario with the current disturbance enabled. The
    /// filter models far more process noise than the simulator injects; the
    /// slack absorbs the current the motion model cannot see.
    pub fn hydrone(seed: u64) -> PipelineConfig {
        PipelineConfig {
            scenario: ScenarioConfig {
                layout: LandmarkLayout::Grid {
                    spacing: 25.0,
                    extent: 400.0,
                    length: 2.0,
                    width: 1.0,
                },
                duration: 600.0,
                ping_rate: 30.0,
                policy: ControlPolicy::random_turn(),
                current_mean: 0.2,
                current_std: 0.1,
                driving: DrivingNoiseParams {
                    sigma_s: 0.1,
                    sigma_t: 0.01,
                    sigma_theta: 0.01,
                    sigma_gamma: 0.01,
                },
                measurement: hydrone_measurement(),
                start: crate::geometry::VehicleState::new(0.0, 0.0, 0.0, 5.0),
                seed,
            },
            filter: FilterSection {
                driving: Some(hydrone_driving()),
                ..Default::default()
            },
        }
    }

    /// Underwater-vehicle scenario: lawnmower survey, weak current, longer
    /// sonar range, sparser landmarks.
    pub fn iver3(seed: u64) -> PipelineConfig {
        PipelineConfig {
            scenario: ScenarioConfig {
                layout: LandmarkLayout::Grid {
                    spacing: 60.0,
                    extent: 150.0,
                    length: 2.0,
                    width: 1.0,
                },
                duration: 600.0,
                ping_rate: 30.0,
                policy: ControlPolicy::Lawnmower {
                    leg_length: 200.0,
                    leg_spacing: 20.0,
                    speed: 1.5,
                },
                current_mean: 0.02,
                current_std: 0.02,
                driving: DrivingNoiseParams {
                    sigma_s: 0.2,
                    sigma_t: 0.02,
                    sigma_theta: 0.02,
                    sigma_gamma: 0.05,
                },
                measurement: iver3_measurement(),
                start: crate::geometry::VehicleState::new(0.0, 0.0, 0.0, 5.0),
                seed,
            },
            filter: FilterSection {
                driving: Some(iver3_driving()),
                ..Default::default()
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::{DEFAULT_GAMMA_GATE, DEFAULT_PARTICLE_COUNT};

    const MINIMAL: &str = r#"
        [scenario]
        duration = 60.0
        seed = 7

        [scenario.layout]
        kind = "grid"
        spacing = 25.0
        extent = 100.0

        [scenario.policy]
        kind = "random-turn"

        [scenario.driving]
        sigma_s = 0.1
        sigma_t = 0.1
        sigma_theta = 1.5
        sigma_gamma = 0.25

        [scenario.measurement]
        sigma_d = 0.75
        sigma_h = 0.25
        sigma_c = 0.1
        p_det = 0.95
        mu_c = 0.01
        r_max = 20.0
    "#;

    #[test]
    fn minimal_toml_fills_defaults() {
        let cfg = PipelineConfig::from_toml_str(MINIMAL, "inline").unwrap();
        assert_eq!(cfg.scenario.ping_rate, 30.0);
        assert_eq!(cfg.scenario.current_mean, 0.2);
        assert_eq!(cfg.scenario.start.gamma, 5.0);
        let fc = cfg.filter_config(99);
        assert_eq!(fc.particle_count, DEFAULT_PARTICLE_COUNT);
        assert_eq!(fc.gamma_gate, DEFAULT_GAMMA_GATE);
        assert_eq!(fc.mode, FilterMode::Sss);
        assert_eq!(fc.seed, 99);
        assert_eq!(fc.driving, cfg.scenario.driving);
        assert_eq!(fc.measurement, cfg.scenario.measurement);
    }

    #[test]
    fn filter_section_overrides_scenario_values() {
        let mut cfg = presets::sim_baseline(1);
        cfg.filter.particle_count = Some(500);
        cfg.filter.gamma_gate = Some(9.2);
        cfg.filter.mode = Some(FilterMode::Dr);
        cfg.filter.driving = Some(presets::hydrone_driving());
        let fc = cfg.filter_config(5);
        assert_eq!(fc.particle_count, 500);
        assert_eq!(fc.gamma_gate, 9.2);
        assert_eq!(fc.mode, FilterMode::Dr);
        assert_eq!(fc.driving, presets::hydrone_driving());
        assert_eq!(fc.measurement, cfg.scenario.measurement);
    }

    #[test]
    fn presets_round_trip_through_toml() {
        for cfg in [
            presets::sim_baseline(42),
            presets::hydrone(42),
            presets::iver3(42),
        ] {
            let text = cfg.to_toml_string();
            let back = PipelineConfig::from_toml_str(&text, "round-trip").unwrap();
            assert_eq!(back, cfg);
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("{MINIMAL}\n[filter]\nparticle_cout = 100\n");
        let err = PipelineConfig::from_toml_str(&text, "typo").unwrap_err();
        assert!(matches!(err, ConfigError::Parse { .. }));
        assert!(err.to_string().contains("particle_cout"), "got: {err}");
    }

    #[test]
    fn parse_errors_carry_line_context() {
        let text = "[scenario]\nduration = \"ten\"\n";
        let err = PipelineConfig::from_toml_str(text, "ctx").unwrap_err();
        let msg = err.to_string();
        assert!(msg.starts_with("ctx:"), "got: {msg}");
        assert!(msg.contains("line 2"), "got: {msg}");
    }

    #[test]
    fn invalid_values_fail_validation() {
        let mut cfg = presets::sim_baseline(1);
        cfg.scenario.duration = 0.0;
        assert!(matches!(cfg.validate(), Err(ConfigError::Scenario(_))));

        let mut cfg = presets::sim_baseline(1);
        cfg.filter.particle_count = Some(0);
        assert!(matches!(cfg.validate(), Err(ConfigError::Filter(_))));
    }

    #[test]
    fn sigma_overrides_parse_from_toml_keys() {
        let mut cfg = presets::sim_baseline(1);
        cfg.scenario.measurement.sigma_d_overrides.insert(3, 1.25);
        let text = cfg.to_toml_string();
        let back = PipelineConfig::from_toml_str(&text, "overrides").unwrap();
        assert_eq!(back.scenario.measurement.sigma_d_for(3), 1.25);
        assert_eq!(back.scenario.measurement.sigma_d_for(4), 0.75);
    }

    #[test]
    fn vehicle_presets_carry_their_field_values() {
        let h = presets::hydrone(0);
        let hf = h.filter_config(0);
        assert_eq!(
            (hf.driving.sigma_s, hf.driving.sigma_t, hf.driving.sigma_theta, hf.driving.sigma_gamma),
            (0.1, 0.1, 1.5, 0.25)
        );
        assert_eq!(hf.measurement.sigma_d, 0.75);
        assert_eq!(hf.measurement.r_max, 20.0);
        assert_eq!(hf.measurement.p_det, 0.95);
        assert_eq!(hf.measurement.mu_c, 0.01);

        let i = presets::iver3(0);
        let ifc = i.filter_config(0);
        assert_eq!(
            (ifc.driving.sigma_s, ifc.driving.sigma_t, ifc.driving.sigma_theta, ifc.driving.sigma_gamma),
            (0.2, 0.5, 1.5, 1.5)
        );
        assert_eq!(ifc.measurement.sigma_d, 1.0);
        assert_eq!(ifc.measurement.r_max, 30.0);
    }
}
