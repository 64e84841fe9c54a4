//! Vehicle motion model and sonar measurement models.
//!
//! The motion model is a planar unicycle driven by commanded speed and turn
//! rate with additive driving noise on speed, turn rate, heading, and
//! altitude. Measurements are pairs of signed slant ranges per detected
//! landmark, plus auxiliary heading and altitude readings every ping, plus
//! uniform clutter.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{crossing, wrap_angle, Landmark, VehicleState};

/// Turn rates below this follow the straight-line limit of the arc motion.
pub const TURN_RATE_EPS: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("time step must be positive and finite, got {0}")]
    NonPositiveDt(f64),
    #[error("no crossing between the ping and landmark {landmark_id}")]
    NoCrossing { landmark_id: u32 },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

/// Commanded speed (m/s) and turn rate (rad/s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlInput {
    pub speed: f64,
    pub turn_rate: f64,
}

impl ControlInput {
    pub fn new(speed: f64, turn_rate: f64) -> Self {
        Self { speed, turn_rate }
    }
}

/// Standard deviations of the driving noise terms.
///
/// `sigma_s` (m/s) and `sigma_t` (rad/s) perturb the commanded speed and
/// turn rate; `sigma_theta` (rad/s) is an extra heading drift rate;
/// `sigma_gamma` (m) is an additive altitude step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrivingNoiseParams {
    pub sigma_s: f64,
    pub sigma_t: f64,
    pub sigma_theta: f64,
    pub sigma_gamma: f64,
}

impl DrivingNoiseParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        let all = [self.sigma_s, self.sigma_t, self.sigma_theta, self.sigma_gamma];
        if all.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(ModelError::InvalidParams(
                "driving noise sigmas must be finite and non-negative".to_string(),
            ));
        }
        Ok(())
    }

    /// Draws one noise vector (n_s, n_t, n_theta, n_gamma).
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 4] {
        let mut n = [0.0; 4];
        let sigmas = [self.sigma_s, self.sigma_t, self.sigma_theta, self.sigma_gamma];
        for (out, sigma) in n.iter_mut().zip(sigmas) {
            let z: f64 = rng.sample(StandardNormal);
            *out = sigma * z;
        }
        n
    }

    pub fn variances(&self) -> [f64; 4] {
        [
            self.sigma_s * self.sigma_s,
            self.sigma_t * self.sigma_t,
            self.sigma_theta * self.sigma_theta,
            self.sigma_gamma * self.sigma_gamma,
        ]
    }
}

/// Density model for clutter detections in the slant-range image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClutterModel {
    /// Both components independently uniform on [-r_max, r_max].
    #[default]
    IndependentUniform,
    /// Uniform on the ordered region |z1| <= |z2|.
    OrderedUniform,
}

/// Measurement model parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementNoiseParams {
    /// Slant-range noise standard deviation (m).
    pub sigma_d: f64,
    /// Altitude measurement noise standard deviation (m).
    pub sigma_h: f64,
    /// Heading measurement noise standard deviation (rad).
    pub sigma_c: f64,
    /// Probability of detecting a landmark the ping crosses.
    pub p_det: f64,
    /// Mean number of clutter detections per ping.
    pub mu_c: f64,
    /// Maximum sonar slant range (m).
    pub r_max: f64,
    #[serde(default)]
    pub clutter_model: ClutterModel,
    /// Optional per-landmark overrides of `sigma_d`, keyed by landmark id.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty", with = "id_key_map")]
    pub sigma_d_overrides: BTreeMap<u32, f64>,
}

/// TOML and JSON table keys must be strings; landmark ids round-trip
/// through their decimal form.
mod id_key_map {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(map: &BTreeMap<u32, f64>, s: S) -> Result<S::Ok, S::Error> {
        let by_name: BTreeMap<String, f64> = map.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        by_name.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<u32, f64>, D::Error> {
        BTreeMap::<String, f64>::deserialize(d)?
            .into_iter()
            .map(|(k, v)| {
                k.parse::<u32>().map(|k| (k, v)).map_err(|_| {
                    serde::de::Error::custom(format!("landmark id key {k:?} is not a u32"))
                })
            })
            .collect()
    }
}

impl MeasurementNoiseParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("sigma_d", self.sigma_d),
            ("sigma_h", self.sigma_h),
            ("sigma_c", self.sigma_c),
            ("mu_c", self.mu_c),
            ("r_max", self.r_max),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(ModelError::InvalidParams(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        if !(self.p_det > 0.0 && self.p_det <= 1.0) {
            return Err(ModelError::InvalidParams(format!(
                "p_det must lie in (0, 1], got {}",
                self.p_det
            )));
        }
        for (id, v) in &self.sigma_d_overrides {
            if !(v > &0.0) || !v.is_finite() {
                return Err(ModelError::InvalidParams(format!(
                    "sigma_d override for landmark {id} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn sigma_d_for(&self, landmark_id: u32) -> f64 {
        *self.sigma_d_overrides.get(&landmark_id).unwrap_or(&self.sigma_d)
    }
}

/// One sonar detection: a signed near/far slant-range pair (m), negative on
/// the port side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub z1: f64,
    pub z2: f64,
}

impl Detection {
    pub fn new(z1: f64, z2: f64) -> Self {
        Self { z1, z2 }
    }

    /// Image-plane center of the pair, used for gating.
    pub fn center_abs(&self) -> f64 {
        0.5 * (self.z1.abs() + self.z2.abs())
    }
}

/// All measurements taken at one ping instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionSet {
    pub timestamp: f64,
    pub detections: Vec<Detection>,
    /// Compass heading measurement (rad).
    pub heading_meas: f64,
    /// Altimeter measurement (m).
    pub altitude_meas: f64,
}

/// Propagates the vehicle state by `dt` seconds under control `u` and one
/// driving-noise draw `(n_s, n_t, n_theta, n_gamma)`.
///
/// The planar motion follows a constant-turn-rate arc; turn rates smaller in
/// magnitude than [`TURN_RATE_EPS`] use the straight-line limit. Heading
/// drift enters scaled by `dt`, altitude noise is an unscaled additive step,
/// and the altitude is clamped at zero.
pub fn transition(
    prev: &VehicleState,
    u: &ControlInput,
    noise: [f64; 4],
    dt: f64,
) -> Result<VehicleState, ModelError> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(ModelError::NonPositiveDt(dt));
    }
    let v_s = u.speed + noise[0];
    let v_t = u.turn_rate + noise[1];
    let (dx, dy) = if v_t.abs() < TURN_RATE_EPS {
        let d = v_s * dt;
        (d * prev.theta.cos(), d * prev.theta.sin())
    } else {
        let k = v_s / v_t;
        let ahead = prev.theta + v_t * dt;
        (
            k * (ahead.sin() - prev.theta.sin()),
            k * (prev.theta.cos() - ahead.cos()),
        )
    };
    Ok(VehicleState {
        x: prev.x + dx,
        y: prev.y + dy,
        theta: wrap_angle(prev.theta + v_t * dt + noise[2] * dt),
        gamma: (prev.gamma + noise[3]).max(0.0),
    })
}

/// Probability that a ping from `state` detects landmark `m`: `p_det` when
/// the footprint crosses the landmark, zero otherwise (including when the
/// altitude leaves no footprint at all).
pub fn detection_probability(
    state: &VehicleState,
    m: &Landmark,
    params: &MeasurementNoiseParams,
) -> f64 {
    match crossing(state, m, params.r_max) {
        Ok(Some(_)) => params.p_det,
        _ => 0.0,
    }
}

pub(crate) fn normal_pdf(x: f64, mean: f64, sigma: f64) -> f64 {
    let z = (x - mean) / sigma;
    (-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
}

pub(crate) fn log_normal_pdf(x: f64, mean: f64, sigma: f64) -> f64 {
    let z = (x - mean) / sigma;
    -0.5 * z * z - sigma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

/// Likelihood of detection `z` given that it originates from landmark `m`
/// seen from `state`: a two-dimensional Gaussian centered on the signed
/// near/far crossing ranges with isotropic standard deviation `sigma_d`.
///
/// Errors with [`ModelError::NoCrossing`] when the ping misses the landmark.
pub fn detection_likelihood(
    z: &Detection,
    state: &VehicleState,
    m: &Landmark,
    params: &MeasurementNoiseParams,
) -> Result<f64, ModelError> {
    let c = crossing(state, m, params.r_max)
        .ok()
        .flatten()
        .ok_or(ModelError::NoCrossing { landmark_id: m.id })?;
    let sigma = params.sigma_d_for(m.id);
    Ok(normal_pdf(z.z1, c.near_signed, sigma) * normal_pdf(z.z2, c.far_signed, sigma))
}

/// Clutter density of a detection pair in the slant-range image.
pub fn clutter_density(z: &Detection, params: &MeasurementNoiseParams) -> f64 {
    let r = params.r_max;
    let in_range = z.z1.abs() <= r && z.z2.abs() <= r;
    if !in_range {
        return 0.0;
    }
    let cell = 1.0 / (2.0 * r);
    match params.clutter_model {
        ClutterModel::IndependentUniform => cell * cell,
        ClutterModel::OrderedUniform => {
            if z.z1.abs() <= z.z2.abs() {
                2.0 * cell * cell
            } else {
                0.0
            }
        }
    }
}

/// Joint log-likelihood of the auxiliary compass and altimeter measurements.
///
/// The heading residual is wrapped before evaluation, so measurements that
/// differ by full turns score identically.
pub fn aux_log_likelihood(
    det: &DetectionSet,
    state: &VehicleState,
    params: &MeasurementNoiseParams,
) -> f64 {
    let heading_residual = wrap_angle(det.heading_meas - state.theta);
    log_normal_pdf(heading_residual, 0.0, params.sigma_c)
        + log_normal_pdf(det.altitude_meas, state.gamma, params.sigma_h)
}
