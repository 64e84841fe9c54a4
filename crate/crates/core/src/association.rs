//! Association of sonar detections to mapped landmarks.
//!
//! Each ping yields detections that originate from gated landmarks, from
//! clutter, or are missed. An association vector assigns every gated
//! landmark a detection index (0 means undetected); a detection can serve at
//! most one landmark. The detection likelihood marginalizes over all valid
//! vectors, either exactly by enumeration or approximately with loopy belief
//! propagation over the landmark/detection bipartite graph.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    crossing_with_footprint, LandmarkGeom, LandmarkMap, PingFootprint, VehicleState,
};
use crate::models::{clutter_density, Detection, MeasurementNoiseParams};

/// Enumeration guard: exact marginalization is for correctness harnesses and
/// small problems only.
pub const MAX_ENUMERATION_PRODUCT: usize = 20;

/// Belief propagation convergence tolerance on message change.
pub const BP_TOLERANCE: f64 = 1e-6;

/// Belief propagation iteration cap.
pub const BP_MAX_ITERATIONS: usize = 100;

#[derive(Debug, Error, PartialEq)]
pub enum AssociationError {
    #[error(
        "exact enumeration limited to num_landmarks * num_detections <= {MAX_ENUMERATION_PRODUCT}, \
         got {num_landmarks} * {num_detections}"
    )]
    EnumerationTooLarge {
        num_landmarks: usize,
        num_detections: usize,
    },
    #[error("position covariance is singular or not finite")]
    SingularCovariance,
}

/// Landmarks whose validation gate contains the current belief, stored as
/// indices into the map's landmark slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatedSet {
    pub indices: Vec<usize>,
    pub gamma_gate: f64,
}

impl GatedSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn ids(&self, map: &LandmarkMap) -> Vec<u32> {
        self.indices.iter().map(|&i| map.landmarks()[i].id).collect()
    }
}

/// Selects the landmarks compatible with a position belief.
///
/// Landmark `d` is gated when the squared Mahalanobis distance of its center
/// from `mean_pos` under the inflated covariance
/// `pos_cov + (r_max + rho_d)^2 I` is at most `gamma_gate`, where `rho_d` is
/// the landmark's half diagonal. The inflation accounts for the sonar's
/// lateral reach and the landmark extent, keeping the test in position units.
pub fn gate(
    map: &LandmarkMap,
    mean_pos: Vector2<f64>,
    pos_cov: Matrix2<f64>,
    r_max: f64,
    gamma_gate: f64,
) -> Result<GatedSet, AssociationError> {
    if !pos_cov.iter().all(|v| v.is_finite()) {
        return Err(AssociationError::SingularCovariance);
    }
    let mut indices = Vec::new();
    for (i, m) in map.landmarks().iter().enumerate() {
        let infl = r_max + m.half_diagonal();
        let infl2 = infl * infl;
        let a = pos_cov[(0, 0)] + infl2;
        let b = pos_cov[(0, 1)];
        let c = pos_cov[(1, 1)] + infl2;
        let det = a * c - b * b;
        if !(det > 0.0) || !det.is_finite() {
            return Err(AssociationError::SingularCovariance);
        }
        let dx = m.x - mean_pos.x;
        let dy = m.y - mean_pos.y;
        // (dx, dy)^T inv(infl_cov) (dx, dy) via the 2x2 adjugate.
        let d2 = (c * dx * dx - 2.0 * b * dx * dy + a * dy * dy) / det;
        if d2 <= gamma_gate {
            indices.push(i);
        }
    }
    Ok(GatedSet {
        indices,
        gamma_gate,
    })
}

/// Per-particle association factor table.
///
/// Entry `(d, l)` for `l >= 1` is the likelihood ratio of detection `l`
/// against clutter times the detection-to-clutter rate ratio; entry
/// `(d, 0)` is the missed-detection factor. Landmarks the particle's ping
/// does not cross have the row `[1, 0, ..., 0]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionFactors {
    pub num_landmarks: usize,
    pub num_detections: usize,
    values: Vec<f64>,
}

impl DetectionFactors {
    pub fn from_values(num_landmarks: usize, num_detections: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), num_landmarks * (num_detections + 1));
        Self {
            num_landmarks,
            num_detections,
            values,
        }
    }

    #[inline]
    pub fn g(&self, d: usize, l: usize) -> f64 {
        self.values[d * (self.num_detections + 1) + l]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Per-step constants shared by every particle's factor evaluation.
pub struct FactorContext<'a> {
    pub geoms: &'a [LandmarkGeom],
    pub detections: &'a [Detection],
    pub params: &'a MeasurementNoiseParams,
    /// p_det / (mu_c * 2 pi sigma_d^2 * f_c(z_l)) per landmark; the constant
    /// multiplier of the Gaussian kernel in g(d, l).
    coef: Vec<f64>,
    inv_two_sigma2: Vec<f64>,
}

impl<'a> FactorContext<'a> {
    pub fn new(
        geoms: &'a [LandmarkGeom],
        detections: &'a [Detection],
        params: &'a MeasurementNoiseParams,
    ) -> Self {
        let mut coef = Vec::with_capacity(geoms.len() * detections.len().max(1));
        let mut inv_two_sigma2 = Vec::with_capacity(geoms.len());
        for geom in geoms {
            let sigma = params.sigma_d_for(geom.landmark.id);
            let k = params.p_det / params.mu_c / (2.0 * std::f64::consts::PI * sigma * sigma);
            inv_two_sigma2.push(1.0 / (2.0 * sigma * sigma));
            for z in detections {
                let fc = clutter_density(z, params);
                coef.push(if fc > 0.0 { k / fc } else { 0.0 });
            }
        }
        Self {
            geoms,
            detections,
            params,
            coef,
            inv_two_sigma2,
        }
    }

    pub fn row_len(&self) -> usize {
        self.detections.len() + 1
    }

    pub fn table_len(&self) -> usize {
        self.geoms.len() * self.row_len()
    }

    /// Fills one particle's factor table into `out` (length `table_len`).
    pub fn fill(&self, state: &VehicleState, fp: &PingFootprint, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.table_len());
        let row = self.row_len();
        let miss = 1.0 - self.params.p_det;
        let pos = state.position();
        for (d, geom) in self.geoms.iter().enumerate() {
            let o = d * row;
            // Cheap reject: the footprint cannot reach the rectangle.
            let reach = self.params.r_max + geom.landmark.half_diagonal();
            let dx = geom.landmark.x - pos.x;
            let dy = geom.landmark.y - pos.y;
            let hit = if dx * dx + dy * dy > reach * reach {
                None
            } else {
                crossing_with_footprint(state, fp, geom, self.params.r_max)
            };
            match hit {
                None => {
                    out[o] = 1.0;
                    out[o + 1..o + row].fill(0.0);
                }
                Some(c) => {
                    out[o] = miss;
                    let inv2s2 = self.inv_two_sigma2[d];
                    for (l, z) in self.detections.iter().enumerate() {
                        let e1 = z.z1 - c.near_signed;
                        let e2 = z.z2 - c.far_signed;
                        let k = self.coef[d * self.detections.len() + l];
                        out[o + 1 + l] = k * (-(e1 * e1 + e2 * e2) * inv2s2).exp();
                    }
                }
            }
        }
    }
}

/// Builds the factor table for one particle, allocating the output.
pub fn detection_factors(
    state: &VehicleState,
    fp: &PingFootprint,
    ctx: &FactorContext,
) -> DetectionFactors {
    let mut values = vec![0.0; ctx.table_len()];
    ctx.fill(state, fp, &mut values);
    DetectionFactors::from_values(ctx.geoms.len(), ctx.detections.len(), values)
}

/// Enumerates every valid association vector: entries in `0..=num_detections`
/// with all nonzero entries distinct.
pub fn enumerate_valid(
    num_landmarks: usize,
    num_detections: usize,
) -> Result<Vec<Vec<u8>>, AssociationError> {
    check_enumeration_size(num_landmarks, num_detections)?;
    let mut out = Vec::new();
    let mut current = vec![0u8; num_landmarks];
    fn rec(d: usize, used: &mut u32, current: &mut Vec<u8>, l: usize, out: &mut Vec<Vec<u8>>) {
        if d == current.len() {
            out.push(current.clone());
            return;
        }
        for a in 0..=l {
            if a > 0 && *used & (1 << a) != 0 {
                continue;
            }
            current[d] = a as u8;
            if a > 0 {
                *used |= 1 << a;
            }
            rec(d + 1, used, current, l, out);
            if a > 0 {
                *used &= !(1 << a);
            }
        }
    }
    let mut used = 0u32;
    rec(0, &mut used, &mut current, num_detections, &mut out);
    Ok(out)
}

fn check_enumeration_size(
    num_landmarks: usize,
    num_detections: usize,
) -> Result<(), AssociationError> {
    if num_landmarks * num_detections > MAX_ENUMERATION_PRODUCT {
        return Err(AssociationError::EnumerationTooLarge {
            num_landmarks,
            num_detections,
        });
    }
    Ok(())
}

/// Exact association log-likelihood: log of the sum over all valid
/// association vectors of the product of per-landmark factors.
pub fn exact_log_likelihood(factors: &DetectionFactors) -> Result<f64, AssociationError> {
    exact_log_likelihood_values(factors.num_landmarks, factors.num_detections, &factors.values)
}

/// [`exact_log_likelihood`] over a borrowed row-major factor table with
/// stride `num_detections + 1`; lets callers batch many tables in one
/// buffer.
pub fn exact_log_likelihood_values(
    num_landmarks: usize,
    num_detections: usize,
    values: &[f64],
) -> Result<f64, AssociationError> {
    check_enumeration_size(num_landmarks, num_detections)?;
    debug_assert_eq!(values.len(), num_landmarks * (num_detections + 1));
    let row = num_detections + 1;
    fn rec(values: &[f64], row: usize, d: usize, num: usize, used: u32, prod: f64) -> f64 {
        if d == num {
            return prod;
        }
        let g = &values[d * row..(d + 1) * row];
        let mut sum = rec(values, row, d + 1, num, used, prod * g[0]);
        for (l, &gl) in g.iter().enumerate().skip(1) {
            if used & (1 << l) == 0 && gl > 0.0 {
                sum += rec(values, row, d + 1, num, used | (1 << l), prod * gl);
            }
        }
        sum
    }
    Ok(rec(values, row, 0, num_landmarks, 0, 1.0).ln())
}

/// Per-landmark association weights produced by belief propagation.
///
/// `kappa(d, l)` scales factor `g(d, l)` in the approximate per-particle
/// likelihood; `kappa(d, 0)` is always 1.
#[derive(Debug, Clone, PartialEq)]
pub struct AssociationWeights {
    pub num_landmarks: usize,
    pub num_detections: usize,
    /// Row-major (d, l) with l in 0..=num_detections.
    kappa: Vec<f64>,
}

impl AssociationWeights {
    /// Weights that leave factors unscaled, exact when no detection or at
    /// most one landmark is present.
    pub fn uniform(num_landmarks: usize, num_detections: usize) -> Self {
        Self {
            num_landmarks,
            num_detections,
            kappa: vec![1.0; num_landmarks * (num_detections + 1)],
        }
    }

    #[inline]
    pub fn kappa(&self, d: usize, l: usize) -> f64 {
        self.kappa[d * (self.num_detections + 1) + l]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BpDiagnostics {
    pub iterations: usize,
    pub converged: bool,
}

/// Runs loopy belief propagation on the particle-averaged factor table.
///
/// Messages iterate until the largest change falls below [`BP_TOLERANCE`] or
/// [`BP_MAX_ITERATIONS`] is reached. For a single detection or a single
/// landmark the graph is a tree and the weights are exact.
pub fn bp_kappa(avg: &DetectionFactors) -> (AssociationWeights, BpDiagnostics) {
    let nd = avg.num_landmarks;
    let nl = avg.num_detections;
    if nd == 0 || nl == 0 {
        return (
            AssociationWeights::uniform(nd, nl),
            BpDiagnostics {
                iterations: 0,
                converged: true,
            },
        );
    }
    // nu[l][d]: detection-to-landmark message; mu[d][l]: landmark-to-detection.
    let mut nu = vec![1.0f64; nl * nd];
    let mut mu = vec![0.0f64; nd * nl];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < BP_MAX_ITERATIONS {
        iterations += 1;
        for d in 0..nd {
            let g0 = avg.g(d, 0).max(f64::MIN_POSITIVE);
            let mut s = 0.0;
            for l in 1..=nl {
                s += avg.g(d, l) * nu[(l - 1) * nd + d];
            }
            for l in 1..=nl {
                let gl = avg.g(d, l);
                let denom = g0 + s - gl * nu[(l - 1) * nd + d];
                mu[d * nl + (l - 1)] = gl / denom.max(f64::MIN_POSITIVE);
            }
        }
        let mut delta = 0.0f64;
        for l in 0..nl {
            let mut s = 0.0;
            for d in 0..nd {
                s += mu[d * nl + l];
            }
            for d in 0..nd {
                let new = 1.0 / (1.0 + s - mu[d * nl + l]);
                delta = delta.max((new - nu[l * nd + d]).abs());
                nu[l * nd + d] = new;
            }
        }
        if delta < BP_TOLERANCE {
            converged = true;
            break;
        }
    }
    let mut kappa = vec![1.0f64; nd * (nl + 1)];
    for d in 0..nd {
        for l in 1..=nl {
            kappa[d * (nl + 1) + l] = nu[(l - 1) * nd + d];
        }
    }
    (
        AssociationWeights {
            num_landmarks: nd,
            num_detections: nl,
            kappa,
        },
        BpDiagnostics {
            iterations,
            converged,
        },
    )
}

/// Approximate association log-likelihood: per-landmark sums scaled by the
/// BP weights, summed in log domain.
pub fn approx_log_likelihood(factors: &DetectionFactors, weights: &AssociationWeights) -> f64 {
    debug_assert_eq!(factors.num_landmarks, weights.num_landmarks);
    debug_assert_eq!(factors.num_detections, weights.num_detections);
    approx_log_likelihood_values(&factors.values, weights)
}

/// [`approx_log_likelihood`] over a borrowed row-major factor table shaped
/// like the weight table.
pub fn approx_log_likelihood_values(values: &[f64], weights: &AssociationWeights) -> f64 {
    let row = weights.num_detections + 1;
    debug_assert_eq!(values.len(), weights.num_landmarks * row);
    let mut ll = 0.0;
    for d in 0..weights.num_landmarks {
        let g = &values[d * row..(d + 1) * row];
        let k = &weights.kappa[d * row..(d + 1) * row];
        let mut s = g[0];
        for (gl, kl) in g[1..].iter().zip(&k[1..]) {
            s += kl * gl;
        }
        if s > 0.0 {
            ll += s.ln();
        } else {
            return f64::NEG_INFINITY;
        }
    }
    ll
}

/// Exact association marginals from enumeration: row `d` holds
/// `P(a_d = l)` for `l` in `0..=num_detections`. Correctness oracle for
/// [`bp_kappa`].
pub fn exact_association_marginals(
    factors: &DetectionFactors,
) -> Result<Vec<Vec<f64>>, AssociationError> {
    let vectors = enumerate_valid(factors.num_landmarks, factors.num_detections)?;
    let mut marginals = vec![vec![0.0; factors.num_detections + 1]; factors.num_landmarks];
    let mut total = 0.0;
    for a in &vectors {
        let mut p = 1.0;
        for (d, &l) in a.iter().enumerate() {
            p *= factors.g(d, l as usize);
        }
        total += p;
        for (d, &l) in a.iter().enumerate() {
            marginals[d][l as usize] += p;
        }
    }
    for row in &mut marginals {
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    Ok(marginals)
}
