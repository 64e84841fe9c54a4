//! Forward simulator: ground-truth trajectories under a surface-current
//! disturbance, with synthetic detection streams drawn from the same
//! measurement model the filter evaluates.
//!
//! Truth propagation and measurement synthesis draw from two separate RNG
//! streams derived from one scenario seed, so the true trajectory is
//! invariant to the landmark layout and measurement parameters.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    crossing_with_footprint, ping_footprint, wrap_angle, GeometryError, Landmark, LandmarkGeom,
    LandmarkMap, Vec2, VehicleState,
};
use crate::models::{
    transition, ControlInput, Detection, DetectionSet, DrivingNoiseParams, MeasurementNoiseParams,
    ModelError,
};

/// Stream id for trajectory randomness (driving noise, current, policy).
pub const MOTION_RNG_STREAM: u64 = 0;
/// Stream id for measurement randomness (thinning, noise, clutter, aux).
pub const MEASUREMENT_RNG_STREAM: u64 = 1;

pub const DEFAULT_PING_RATE: f64 = 30.0;

#[derive(Debug, Error)]
pub enum SimulatorError {
    #[error("invalid scenario: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Landmark field: an explicit list or a square grid centered on the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LandmarkLayout {
    Grid {
        /// Center-to-center spacing in meters.
        spacing: f64,
        /// Half-width of the covered square; centers lie within it.
        extent: f64,
        #[serde(default = "default_landmark_length")]
        length: f64,
        #[serde(default = "default_landmark_width")]
        width: f64,
    },
    Explicit { landmarks: Vec<Landmark> },
}

fn default_landmark_length() -> f64 {
    2.0
}

fn default_landmark_width() -> f64 {
    1.0
}

// Golden-angle increment decorrelates grid landmark orientations without
// consuming RNG draws, keeping layouts a pure function of the config.
const ORIENTATION_STEP: f64 = 2.399_963_229_728_653;

impl LandmarkLayout {
    pub fn build_map(&self) -> Result<LandmarkMap, SimulatorError> {
        match self {
            LandmarkLayout::Grid {
                spacing,
                extent,
                length,
                width,
            } => {
                if !(*spacing > 0.0) || !spacing.is_finite() {
                    return Err(SimulatorError::InvalidConfig(format!(
                        "grid spacing must be positive, got {spacing}"
                    )));
                }
                if !(*extent >= 0.0) || !extent.is_finite() {
                    return Err(SimulatorError::InvalidConfig(format!(
                        "grid extent must be non-negative, got {extent}"
                    )));
                }
                // Offset by half a spacing so no landmark sits on the origin
                // start pose.
                let k = (extent / spacing + 0.5).floor() as i64;
                let mut landmarks = Vec::new();
                let mut id = 0u32;
                for i in -k..k {
                    for j in -k..k {
                        let x = (i as f64 + 0.5) * spacing;
                        let y = (j as f64 + 0.5) * spacing;
                        let theta = wrap_angle(id as f64 * ORIENTATION_STEP);
                        landmarks.push(Landmark::new(id, x, y, theta, *length, *width)?);
                        id += 1;
                    }
                }
                Ok(LandmarkMap::new(landmarks)?)
            }
            LandmarkLayout::Explicit { landmarks } => Ok(LandmarkMap::new(landmarks.clone())?),
        }
    }
}

/// Piecewise control schedule entry: `u` holds from `from` (seconds) until
/// the next entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleEntry {
    pub from: f64,
    pub speed: f64,
    pub turn_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ControlPolicy {
    /// Piecewise-constant random control, redrawn every `period` seconds.
    RandomTurn {
        #[serde(default = "default_turn_period")]
        period: f64,
        #[serde(default = "default_speed_range")]
        speed_range: (f64, f64),
        #[serde(default = "default_turn_range")]
        turn_range: (f64, f64),
    },
    /// Parallel survey legs along +x, stepping +y between legs.
    Lawnmower {
        leg_length: f64,
        leg_spacing: f64,
        #[serde(default = "default_survey_speed")]
        speed: f64,
    },
    Scripted { schedule: Vec<ScheduleEntry> },
}

fn default_turn_period() -> f64 {
    10.0
}

fn default_speed_range() -> (f64, f64) {
    (0.5, 2.0)
}

fn default_turn_range() -> (f64, f64) {
    (-0.2, 0.2)
}

fn default_survey_speed() -> f64 {
    1.5
}

impl ControlPolicy {
    pub fn random_turn() -> Self {
        ControlPolicy::RandomTurn {
            period: default_turn_period(),
            speed_range: default_speed_range(),
            turn_range: default_turn_range(),
        }
    }

    fn validate(&self) -> Result<(), SimulatorError> {
        let bad = |msg: String| Err(SimulatorError::InvalidConfig(msg));
        match self {
            ControlPolicy::RandomTurn {
                period,
                speed_range,
                turn_range,
            } => {
                if !(*period > 0.0) || !period.is_finite() {
                    return bad(format!("random-turn period must be positive, got {period}"));
                }
                for (name, (lo, hi)) in [("speed", speed_range), ("turn", turn_range)] {
                    if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
                        return bad(format!("random-turn {name} range ({lo}, {hi}) is not ordered"));
                    }
                }
                if speed_range.0 < 0.0 {
                    return bad("random-turn speeds must be non-negative".to_string());
                }
            }
            ControlPolicy::Lawnmower {
                leg_length,
                leg_spacing,
                speed,
            } => {
                for (name, v) in [
                    ("leg_length", leg_length),
                    ("leg_spacing", leg_spacing),
                    ("speed", speed),
                ] {
                    if !(*v > 0.0) || !v.is_finite() {
                        return bad(format!("lawnmower {name} must be positive, got {v}"));
                    }
                }
            }
            ControlPolicy::Scripted { schedule } => {
                if schedule.is_empty() {
                    return bad("scripted schedule must not be empty".to_string());
                }
                if schedule[0].from > 0.0 {
                    return bad("scripted schedule must cover t = 0".to_string());
                }
                if schedule.windows(2).any(|w| !(w[0].from < w[1].from)) {
                    return bad("scripted schedule times must increase strictly".to_string());
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub layout: LandmarkLayout,
    /// Run length in seconds.
    pub duration: f64,
    #[serde(default = "default_ping_rate")]
    pub ping_rate: f64,
    pub policy: ControlPolicy,
    /// Mean surface-current speed, m/s; direction is fixed per run.
    #[serde(default = "default_current_mean")]
    pub current_mean: f64,
    #[serde(default = "default_current_std")]
    pub current_std: f64,
    pub driving: DrivingNoiseParams,
    pub measurement: MeasurementNoiseParams,
    #[serde(default = "default_start")]
    pub start: VehicleState,
    pub seed: u64,
}

fn default_ping_rate() -> f64 {
    DEFAULT_PING_RATE
}

fn default_current_mean() -> f64 {
    0.2
}

fn default_current_std() -> f64 {
    0.1
}

fn default_start() -> VehicleState {
    VehicleState::new(0.0, 0.0, 0.0, 5.0)
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), SimulatorError> {
        if !(self.duration > 0.0) || !self.duration.is_finite() {
            return Err(SimulatorError::InvalidConfig(format!(
                "duration must be positive, got {}",
                self.duration
            )));
        }
        if !(self.ping_rate > 0.0) || !self.ping_rate.is_finite() {
            return Err(SimulatorError::InvalidConfig(format!(
                "ping_rate must be positive, got {}",
                self.ping_rate
            )));
        }
        for (name, v) in [
            ("current_mean", self.current_mean),
            ("current_std", self.current_std),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(SimulatorError::InvalidConfig(format!(
                    "{name} must be non-negative, got {v}"
                )));
            }
        }
        self.policy.validate()?;
        self.driving.validate()?;
        self.measurement.validate()?;
        self.layout.build_map()?;
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.ping_rate
    }

    pub fn step_count(&self) -> usize {
        ((self.ping_rate * self.duration).ceil() as usize).max(1)
    }
}

/// One simulated step: the true state at the timestamp, the control held
/// until the next step, and the synthesized measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthStep {
    pub state: VehicleState,
    pub control: ControlInput,
    pub dets: DetectionSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthRun {
    pub steps: Vec<TruthStep>,
    /// Fraction of pings with at least one true (non-clutter) detection,
    /// the quantity that maps a layout onto an observation-probability
    /// bucket.
    pub observation_frequency: f64,
}

impl GroundTruthRun {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// The (control, measurements) pairs the filter consumes.
    pub fn filter_inputs(&self) -> Vec<(ControlInput, DetectionSet)> {
        self.steps
            .iter()
            .map(|s| (s.control, s.dets.clone()))
            .collect()
    }
}

/// Seed for an indexed run in a batch, a splitmix64 hash of the base seed
/// and the run index so neighboring indices give uncorrelated streams.
pub fn derive_seed(base: u64, run_index: u64) -> u64 {
    let mut z = base ^ run_index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Advances the true state one step: the motion model with sampled driving
/// noise, then the current displacement along the per-run fixed direction
/// with per-step speed `N(current_mean, current_std^2)` clamped at zero.
pub fn propagate_truth<R: Rng + ?Sized>(
    state: &VehicleState,
    u: &ControlInput,
    cfg: &ScenarioConfig,
    current_dir: Vec2,
    rng: &mut R,
) -> Result<VehicleState, ModelError> {
    let dt = cfg.dt();
    let noise = cfg.driving.sample(rng);
    let next = transition(state, u, noise, dt)?;
    let z: f64 = rng.sample(StandardNormal);
    let speed = (cfg.current_mean + cfg.current_std * z).max(0.0);
    let shift = current_dir * (speed * dt);
    Ok(VehicleState::new(
        next.x + shift.x,
        next.y + shift.y,
        next.theta,
        next.gamma,
    ))
}

/// Synthesizes one ping's measurements from the true state.
///
/// Every crossed landmark yields its signed range pair plus `N(0, sigma_d^2)`
/// noise per component with probability `p_det`; `Poisson(mu_c)` clutter
/// pairs are appended (components uniform on `[-r_max, r_max]`, ordered so
/// `|z1| <= |z2|`); the detection order is shuffled. Heading and altitude
/// measurements carry compass and altimeter noise.
pub fn synth_detections<R: Rng + ?Sized>(
    state: &VehicleState,
    map: &LandmarkMap,
    params: &MeasurementNoiseParams,
    timestamp: f64,
    rng: &mut R,
) -> DetectionSet {
    let geoms: Vec<LandmarkGeom> = map
        .landmarks()
        .iter()
        .copied()
        .map(LandmarkGeom::new)
        .collect();
    synth_from_geoms(state, &geoms, params, timestamp, rng).0
}

pub(crate) fn synth_from_geoms<R: Rng + ?Sized>(
    state: &VehicleState,
    geoms: &[LandmarkGeom],
    params: &MeasurementNoiseParams,
    timestamp: f64,
    rng: &mut R,
) -> (DetectionSet, usize) {
    let mut detections = Vec::new();
    let mut true_count = 0usize;
    if let Ok(fp) = ping_footprint(state, params.r_max) {
        for geom in geoms {
            let m = &geom.landmark;
            let dx = m.x - state.x;
            let dy = m.y - state.y;
            let reach = params.r_max + m.half_diagonal();
            if dx * dx + dy * dy > reach * reach {
                continue;
            }
            let Some(cx) = crossing_with_footprint(state, &fp, geom, params.r_max) else {
                continue;
            };
            let thin: f64 = rng.gen();
            if thin < params.p_det {
                let sd = params.sigma_d_for(m.id);
                let n1: f64 = rng.sample(StandardNormal);
                let n2: f64 = rng.sample(StandardNormal);
                detections.push(Detection::new(
                    cx.near_signed + sd * n1,
                    cx.far_signed + sd * n2,
                ));
                true_count += 1;
            }
        }
    }
    if params.mu_c > 0.0 {
        let poisson = Poisson::new(params.mu_c).expect("mu_c validated positive");
        let k = rng.sample(poisson) as usize;
        for _ in 0..k {
            let a = rng.gen_range(-params.r_max..params.r_max);
            let b = rng.gen_range(-params.r_max..params.r_max);
            let (z1, z2) = if a.abs() <= b.abs() { (a, b) } else { (b, a) };
            detections.push(Detection::new(z1, z2));
        }
    }
    detections.shuffle(rng);
    let zc: f64 = rng.sample(StandardNormal);
    let zh: f64 = rng.sample(StandardNormal);
    let set = DetectionSet {
        timestamp,
        detections,
        heading_meas: wrap_angle(state.theta + params.sigma_c * zc),
        altitude_meas: state.gamma + params.sigma_h * zh,
    };
    (set, true_count)
}

/// Runtime state of a control policy; draws come from the motion stream so
/// trajectories are independent of the measurement setup.
enum PolicyDriver<'a> {
    RandomTurn {
        period: f64,
        speed_range: (f64, f64),
        turn_range: (f64, f64),
        next_switch: f64,
        current: ControlInput,
    },
    Lawnmower {
        leg_length: f64,
        leg_spacing: f64,
        speed: f64,
        waypoint: usize,
    },
    Scripted {
        schedule: &'a [ScheduleEntry],
        idx: usize,
    },
}

impl<'a> PolicyDriver<'a> {
    fn new(policy: &'a ControlPolicy) -> Self {
        match policy {
            ControlPolicy::RandomTurn {
                period,
                speed_range,
                turn_range,
            } => PolicyDriver::RandomTurn {
                period: *period,
                speed_range: *speed_range,
                turn_range: *turn_range,
                next_switch: f64::NEG_INFINITY,
                current: ControlInput::new(0.0, 0.0),
            },
            ControlPolicy::Lawnmower {
                leg_length,
                leg_spacing,
                speed,
            } => PolicyDriver::Lawnmower {
                leg_length: *leg_length,
                leg_spacing: *leg_spacing,
                speed: *speed,
                waypoint: 0,
            },
            ControlPolicy::Scripted { schedule } => PolicyDriver::Scripted { schedule, idx: 0 },
        }
    }

    fn control<R: Rng + ?Sized>(&mut self, t: f64, state: &VehicleState, rng: &mut R) -> ControlInput {
        match self {
            PolicyDriver::RandomTurn {
                period,
                speed_range,
                turn_range,
                next_switch,
                current,
            } => {
                if t >= *next_switch {
                    let draw = |rng: &mut R, (lo, hi): (f64, f64)| {
                        if lo == hi {
                            lo
                        } else {
                            rng.gen_range(lo..hi)
                        }
                    };
                    let speed = draw(rng, *speed_range);
                    let turn = draw(rng, *turn_range);
                    *current = ControlInput::new(speed, turn);
                    *next_switch = t + *period;
                }
                *current
            }
            PolicyDriver::Lawnmower {
                leg_length,
                leg_spacing,
                speed,
                waypoint,
            } => {
                // Waypoints snake: (L,0), (L,d), (0,d), (0,2d), (L,2d), ...
                let target = |n: usize| {
                    let x = if n % 4 < 2 { *leg_length } else { 0.0 };
                    let y = n.div_ceil(2) as f64 * *leg_spacing;
                    Vec2::new(x, y)
                };
                let capture = 5.0;
                let mut wp = target(*waypoint);
                if (wp - state.position()).norm() < capture {
                    *waypoint += 1;
                    wp = target(*waypoint);
                }
                let to = wp - state.position();
                let err = wrap_angle(f64::atan2(to.y, to.x) - state.theta);
                ControlInput::new(*speed, (2.0 * err).clamp(-0.5, 0.5))
            }
            PolicyDriver::Scripted { schedule, idx } => {
                while *idx + 1 < schedule.len() && schedule[*idx + 1].from <= t {
                    *idx += 1;
                }
                let e = schedule[*idx];
                ControlInput::new(e.speed, e.turn_rate)
            }
        }
    }
}

/// Simulates a full scenario.
///
/// Step timestamps are uniform at `1/ping_rate`; the run has
/// `ceil(ping_rate * duration)` steps. All randomness derives from
/// `cfg.seed` through the two module streams.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<GroundTruthRun, SimulatorError> {
    cfg.validate()?;
    let map = cfg.layout.build_map()?;
    let geoms: Vec<LandmarkGeom> = map
        .landmarks()
        .iter()
        .copied()
        .map(LandmarkGeom::new)
        .collect();
    let mut motion = ChaCha8Rng::seed_from_u64(cfg.seed);
    motion.set_stream(MOTION_RNG_STREAM);
    let mut meas = ChaCha8Rng::seed_from_u64(cfg.seed);
    meas.set_stream(MEASUREMENT_RNG_STREAM);

    let angle = motion.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
    let current_dir = Vec2::new(angle.cos(), angle.sin());

    let n = cfg.step_count();
    let dt = cfg.dt();
    let mut driver = PolicyDriver::new(&cfg.policy);
    let mut state = cfg.start;
    let mut steps = Vec::with_capacity(n);
    let mut observed = 0usize;
    for k in 0..n {
        let t = k as f64 * dt;
        let u = driver.control(t, &state, &mut motion);
        let (dets, true_count) = synth_from_geoms(&state, &geoms, &cfg.measurement, t, &mut meas);
        if true_count > 0 {
            observed += 1;
        }
        steps.push(TruthStep {
            state,
            control: u,
            dets,
        });
        state = propagate_truth(&state, &u, cfg, current_dir, &mut motion)?;
    }
    Ok(GroundTruthRun {
        steps,
        observation_frequency: observed as f64 / n as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ClutterModel;
    use approx::assert_relative_eq;
    use std::collections::BTreeMap;

    fn quiet_driving() -> DrivingNoiseParams {
        DrivingNoiseParams {
            sigma_s: 0.0,
            sigma_t: 0.0,
            sigma_theta: 0.0,
            sigma_gamma: 0.0,
        }
    }

    fn base_measurement() -> MeasurementNoiseParams {
        MeasurementNoiseParams {
            sigma_d: 0.75,
            sigma_h: 0.25,
            sigma_c: 0.1,
            p_det: 0.95,
            mu_c: 0.01,
            r_max: 20.0,
            clutter_model: ClutterModel::IndependentUniform,
            sigma_d_overrides: BTreeMap::new(),
        }
    }

    fn base_config(layout: LandmarkLayout) -> ScenarioConfig {
        ScenarioConfig {
            layout,
            duration: 10.0,
            ping_rate: DEFAULT_PING_RATE,
            policy: ControlPolicy::random_turn(),
            current_mean: 0.0,
            current_std: 0.0,
            driving: quiet_driving(),
            measurement: base_measurement(),
            start: VehicleState::new(0.0, 0.0, 0.0, 5.0),
            seed: 9,
        }
    }

    fn empty_layout() -> LandmarkLayout {
        LandmarkLayout::Explicit { landmarks: vec![] }
    }

    #[test]
    fn propagation_without_current_matches_the_motion_model() {
        let cfg = base_config(empty_layout());
        let state = VehicleState::new(1.0, 2.0, 0.3, 5.0);
        let u = ControlInput::new(1.5, 0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = propagate_truth(&state, &u, &cfg, Vec2::new(1.0, 0.0), &mut rng).unwrap();
        let expect = transition(&state, &u, [0.0; 4], cfg.dt()).unwrap();
        assert_eq!(out, expect);
    }

    #[test]
    fn deterministic_current_shifts_along_its_direction() {
        let mut cfg = base_config(empty_layout());
        cfg.current_mean = 0.2;
        cfg.current_std = 0.0;
        cfg.ping_rate = 1.0;
        let state = VehicleState::new(0.0, 0.0, 0.0, 5.0);
        let u = ControlInput::new(1.0, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = propagate_truth(&state, &u, &cfg, Vec2::new(1.0, 0.0), &mut rng).unwrap();
        let base = transition(&state, &u, [0.0; 4], 1.0).unwrap();
        assert_relative_eq!(out.x, base.x + 0.2, epsilon = 1e-12);
        assert_relative_eq!(out.y, base.y, epsilon = 1e-12);
    }

    #[test]
    fn current_magnitude_matches_its_nominal_mean() {
        let mut cfg = base_config(empty_layout());
        cfg.current_mean = 0.2;
        cfg.current_std = 0.1;
        cfg.ping_rate = 1.0;
        let state = VehicleState::new(0.0, 0.0, 0.0, 5.0);
        let u = ControlInput::new(0.0, 0.0);
        let dir = Vec2::new(0.6, 0.8);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 10_000;
        let mut mags = Vec::with_capacity(n);
        for _ in 0..n {
            let out = propagate_truth(&state, &u, &cfg, dir, &mut rng).unwrap();
            mags.push(out.position().norm());
        }
        let mean: f64 = mags.iter().sum::<f64>() / n as f64;
        let var: f64 = mags.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        let se = (var / n as f64).sqrt();
        assert!(
            (mean - 0.2).abs() <= 3.0 * se + 1e-3,
            "mean step displacement {mean} not within 3 SE {} of 0.2",
            3.0 * se
        );
    }

    #[test]
    fn noise_free_detection_equals_the_crossing_ranges() {
        let mut params = base_measurement();
        params.p_det = 1.0;
        params.sigma_d = 0.0;
        params.mu_c = 0.0;
        params.sigma_c = 0.0;
        params.sigma_h = 0.0;
        let state = VehicleState::new(0.0, 0.0, 0.0, 5.0);
        let lm = Landmark::new(7, 0.0, 10.0, 0.0, 2.0, 2.0).unwrap();
        let map = LandmarkMap::new(vec![lm]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dets = synth_detections(&state, &map, &params, 1.25, &mut rng);
        let cx = crate::geometry::crossing(&state, &lm, params.r_max)
            .unwrap()
            .expect("landmark is in view");
        assert_eq!(dets.timestamp, 1.25);
        assert_eq!(dets.detections.len(), 1);
        assert_eq!(dets.detections[0].z1, cx.near_signed);
        assert_eq!(dets.detections[0].z2, cx.far_signed);
        assert_eq!(dets.heading_meas, state.theta);
        assert_eq!(dets.altitude_meas, state.gamma);
    }

    #[test]
    fn clutter_count_matches_its_rate() {
        let mut params = base_measurement();
        params.mu_c = 0.01;
        let state = VehicleState::new(0.0, 0.0, 0.0, 5.0);
        let map = LandmarkMap::new(vec![]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let mut total = 0usize;
        for k in 0..n {
            let dets = synth_detections(&state, &map, &params, k as f64, &mut rng);
            total += dets.detections.len();
            for d in &dets.detections {
                assert!(d.z1.abs() <= d.z2.abs(), "clutter pair must be ordered");
                assert!(d.z1.abs() <= params.r_max && d.z2.abs() <= params.r_max);
            }
        }
        let mean = total as f64 / n as f64;
        // Poisson: variance equals the rate.
        let se = (0.01f64 / n as f64).sqrt();
        assert!(
            (mean - 0.01).abs() <= 3.0 * se,
            "clutter rate {mean} not within 3 SE {} of 0.01",
            3.0 * se
        );
    }

    #[test]
    fn empty_scene_without_clutter_yields_no_detections() {
        let mut params = base_measurement();
        params.mu_c = 0.0;
        let state = VehicleState::new(0.0, 0.0, 0.0, 5.0);
        let map = LandmarkMap::new(vec![]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for k in 0..100 {
            let dets = synth_detections(&state, &map, &params, k as f64, &mut rng);
            assert!(dets.detections.is_empty());
        }
    }

    #[test]
    fn realized_detection_rate_matches_p_det() {
        let mut params = base_measurement();
        params.p_det = 0.7;
        params.sigma_d = 0.0;
        params.mu_c = 0.0;
        let state = VehicleState::new(0.0, 0.0, 0.0, 5.0);
        let map = LandmarkMap::new(vec![Landmark::new(1, 0.0, 10.0, 0.0, 2.0, 2.0).unwrap()])
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let n = 100_000;
        let mut hits = 0usize;
        for k in 0..n {
            let dets = synth_detections(&state, &map, &params, k as f64, &mut rng);
            hits += dets.detections.len();
        }
        let rate = hits as f64 / n as f64;
        let se = (0.7f64 * 0.3 / n as f64).sqrt();
        assert!(
            (rate - 0.7).abs() <= 3.0 * se,
            "detection rate {rate} not within 3 SE {} of 0.7",
            3.0 * se
        );
    }

    #[test]
    fn tiny_duration_still_produces_one_step() {
        let mut cfg = base_config(empty_layout());
        cfg.duration = 1e-6;
        let run = run_scenario(&cfg).unwrap();
        assert_eq!(run.len(), 1);
    }

    #[test]
    fn timestamps_are_uniform_at_the_ping_rate() {
        let mut cfg = base_config(empty_layout());
        cfg.duration = 1.0;
        let run = run_scenario(&cfg).unwrap();
        assert_eq!(run.len(), 30);
        for (k, step) in run.steps.iter().enumerate() {
            assert_relative_eq!(step.dets.timestamp, k as f64 / 30.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn scenario_runs_are_deterministic() {
        let mut cfg = base_config(LandmarkLayout::Grid {
            spacing: 25.0,
            extent: 100.0,
            length: 2.0,
            width: 1.0,
        });
        cfg.duration = 20.0;
        cfg.driving = DrivingNoiseParams {
            sigma_s: 0.1,
            sigma_t: 0.1,
            sigma_theta: 0.0015,
            sigma_gamma: 0.25,
        };
        cfg.current_mean = 0.2;
        cfg.current_std = 0.1;
        let a = run_scenario(&cfg).unwrap();
        let b = run_scenario(&cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn truth_is_invariant_to_the_landmark_layout() {
        let mut with_landmarks = base_config(LandmarkLayout::Grid {
            spacing: 25.0,
            extent: 100.0,
            length: 2.0,
            width: 1.0,
        });
        with_landmarks.duration = 20.0;
        with_landmarks.driving = DrivingNoiseParams {
            sigma_s: 0.1,
            sigma_t: 0.1,
            sigma_theta: 0.0015,
            sigma_gamma: 0.25,
        };
        with_landmarks.current_mean = 0.2;
        with_landmarks.current_std = 0.1;
        let mut bare = with_landmarks.clone();
        bare.layout = empty_layout();
        let a = run_scenario(&with_landmarks).unwrap();
        let b = run_scenario(&bare).unwrap();
        assert!(a.observation_frequency > 0.0);
        assert_eq!(b.observation_frequency, 0.0);
        for (sa, sb) in a.steps.iter().zip(&b.steps) {
            assert_eq!(sa.state, sb.state);
            assert_eq!(sa.control, sb.control);
        }
    }

    #[test]
    fn grid_layout_covers_the_extent_symmetrically() {
        let layout = LandmarkLayout::Grid {
            spacing: 25.0,
            extent: 100.0,
            length: 2.0,
            width: 1.0,
        };
        let map = layout.build_map().unwrap();
        assert_eq!(map.len(), 64);
        for m in map.landmarks() {
            assert!(m.x.abs() <= 100.0 && m.y.abs() <= 100.0);
            assert_relative_eq!((m.x / 12.5).round(), m.x / 12.5, epsilon = 1e-12);
        }
        let min_x = map
            .landmarks()
            .iter()
            .map(|m| m.x)
            .fold(f64::INFINITY, f64::min);
        let max_x = map
            .landmarks()
            .iter()
            .map(|m| m.x)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_relative_eq!(min_x, -max_x, epsilon = 1e-12);
    }

    #[test]
    fn random_turn_policy_holds_controls_for_its_period() {
        let mut cfg = base_config(empty_layout());
        cfg.duration = 30.0;
        let run = run_scenario(&cfg).unwrap();
        let controls: Vec<ControlInput> = run.steps.iter().map(|s| s.control).collect();
        // 30 Hz and a 10 s period: three blocks of 300 identical controls.
        for block in controls.chunks(300) {
            assert!(block.iter().all(|u| *u == block[0]));
        }
        for u in &controls {
            assert!((0.5..2.0).contains(&u.speed));
            assert!((-0.2..0.2).contains(&u.turn_rate));
        }
        assert_ne!(controls[0], controls[300]);
    }

    #[test]
    fn lawnmower_policy_walks_the_legs() {
        let mut cfg = base_config(empty_layout());
        cfg.policy = ControlPolicy::Lawnmower {
            leg_length: 100.0,
            leg_spacing: 20.0,
            speed: 1.5,
        };
        cfg.duration = 600.0;
        let run = run_scenario(&cfg).unwrap();
        let xs: Vec<f64> = run.steps.iter().map(|s| s.state.x).collect();
        let ys: Vec<f64> = run.steps.iter().map(|s| s.state.y).collect();
        let max_y = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(
            max_y > 40.0,
            "survey should have advanced several legs, reached y = {max_y}"
        );
        for (x, y) in xs.iter().zip(&ys) {
            assert!((-30.0..130.0).contains(x), "x = {x} left the survey box");
            assert!((-30.0..260.0).contains(y), "y = {y} left the survey box");
        }
    }

    #[test]
    fn scripted_policy_follows_its_schedule() {
        let mut cfg = base_config(empty_layout());
        cfg.policy = ControlPolicy::Scripted {
            schedule: vec![
                ScheduleEntry {
                    from: 0.0,
                    speed: 1.0,
                    turn_rate: 0.0,
                },
                ScheduleEntry {
                    from: 5.0,
                    speed: 2.0,
                    turn_rate: 0.1,
                },
            ],
        };
        cfg.duration = 10.0;
        let run = run_scenario(&cfg).unwrap();
        for step in &run.steps {
            let expect = if step.dets.timestamp < 5.0 {
                ControlInput::new(1.0, 0.0)
            } else {
                ControlInput::new(2.0, 0.1)
            };
            assert_eq!(step.control, expect, "at t = {}", step.dets.timestamp);
        }
    }

    #[test]
    fn config_validation_rejects_bad_fields() {
        let mut cfg = base_config(empty_layout());
        cfg.duration = 0.0;
        assert!(matches!(
            run_scenario(&cfg),
            Err(SimulatorError::InvalidConfig(_))
        ));
        let mut cfg = base_config(empty_layout());
        cfg.policy = ControlPolicy::Scripted { schedule: vec![] };
        assert!(cfg.validate().is_err());
        let mut cfg = base_config(LandmarkLayout::Grid {
            spacing: 0.0,
            extent: 100.0,
            length: 2.0,
            width: 1.0,
        });
        cfg.duration = 1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn derived_seeds_are_distinct_and_stable() {
        let s00 = derive_seed(0, 0);
        let s01 = derive_seed(0, 1);
        let s10 = derive_seed(1, 0);
        assert_ne!(s00, s01);
        assert_ne!(s00, s10);
        assert_ne!(s01, s10);
        assert_eq!(s00, derive_seed(0, 0));
    }
}
