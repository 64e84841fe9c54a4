//! Sequential Bayesian navigation filter.
//!
//! Each step propagates a Gaussian state belief through the motion model
//! with an unscented transform, then corrects it with a particle update:
//! particles drawn from the predicted Gaussian are weighted by the
//! association-marginalized detection likelihood plus the compass and
//! altimeter likelihoods, the posterior Gaussian is extracted from the
//! weighted set, and the set is resampled systematically.
//!
//! When every gated landmark is beyond the reach of any plausible particle,
//! the detection likelihood is constant across particles and the update
//! reduces to conditioning the prediction on the compass and altimeter,
//! which has a closed form; sampling there would only add Monte Carlo
//! noise that accumulates into a position random walk.

use nalgebra::{Matrix2, Matrix4, SMatrix, SVector, Vector2, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::association::{
    approx_log_likelihood_values, bp_kappa, exact_log_likelihood_values, gate, AssociationError,
    AssociationWeights, BpDiagnostics, DetectionFactors, FactorContext, GatedSet,
    MAX_ENUMERATION_PRODUCT,
};
use crate::geometry::{ping_footprint_trig, wrap_angle, LandmarkGeom, LandmarkMap, VehicleState};
use crate::models::{
    aux_log_likelihood, transition, ControlInput, DetectionSet, DrivingNoiseParams,
    MeasurementNoiseParams, ModelError,
};
use crate::parallel::{for_each_chunk, for_each_chunk3, Threading, CHUNK};

pub const DEFAULT_PARTICLE_COUNT: usize = 10_000;
pub const DEFAULT_GAMMA_GATE: f64 = 6.6;

/// One-shot diagonal jitter added when a covariance factorization fails.
pub const COV_JITTER: f64 = 1e-10;

/// Most negative covariance eigenvalue repaired silently; anything below
/// this is treated as a genuinely indefinite matrix.
pub const EIGEN_TOLERANCE: f64 = 1e-10;

/// Stream id of the filter's RNG, distinct from the simulator streams so a
/// shared seed never aliases their draws.
pub const FILTER_RNG_STREAM: u64 = 2;

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("covariance is not positive semidefinite")]
    NonPositiveDefinite,
    #[error("all particle weights vanished")]
    DegenerateWeights,
    #[error("timestamps must increase strictly: step {step} has dt {dt}")]
    NonMonotonicTimestamps { step: usize, dt: f64 },
    #[error("invalid filter config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Association(#[from] AssociationError),
    #[error("step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<FilterError>,
    },
}

fn at_step(step: usize) -> impl FnOnce(FilterError) -> FilterError {
    move |source| FilterError::Step {
        step,
        source: Box::new(source),
    }
}

/// Gaussian approximation of the state posterior over (x, y, theta, gamma).
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    pub mean: Vector4<f64>,
    pub cov: Matrix4<f64>,
}

impl GaussianBelief {
    /// Builds a belief with a wrapped heading mean and a symmetrized,
    /// positive-semidefinite covariance. Eigenvalues in
    /// `[-EIGEN_TOLERANCE, 0)` are clamped to zero; anything lower is an
    /// error.
    pub fn new(mean: Vector4<f64>, cov: Matrix4<f64>) -> Result<Self, FilterError> {
        if !mean.iter().chain(cov.iter()).all(|v| v.is_finite()) {
            return Err(FilterError::NonPositiveDefinite);
        }
        let mean = Vector4::new(mean[0], mean[1], wrap_angle(mean[2]), mean[3]);
        let mut sym = 0.5 * (cov + cov.transpose());
        if psd_lower(&sym).is_none() {
            let eig = sym.symmetric_eigen();
            if eig.eigenvalues.min() < -EIGEN_TOLERANCE {
                return Err(FilterError::NonPositiveDefinite);
            }
            let clamped = eig.eigenvalues.map(|v| v.max(0.0));
            sym = eig.eigenvectors * Matrix4::from_diagonal(&clamped) * eig.eigenvectors.transpose();
            sym = 0.5 * (sym + sym.transpose());
        }
        Ok(Self { mean, cov: sym })
    }

    /// Point belief with zero covariance.
    pub fn certain(state: &VehicleState) -> Self {
        Self {
            mean: Vector4::new(state.x, state.y, state.theta, state.gamma),
            cov: Matrix4::zeros(),
        }
    }

    pub fn state(&self) -> VehicleState {
        VehicleState::new(self.mean[0], self.mean[1], self.mean[2], self.mean[3])
    }

    pub fn position_mean(&self) -> Vector2<f64> {
        Vector2::new(self.mean[0], self.mean[1])
    }

    pub fn position_cov(&self) -> Matrix2<f64> {
        self.cov.fixed_view::<2, 2>(0, 0).into_owned()
    }
}

/// State belief augmented with the zero-mean driving noise terms, the input
/// of the unscented prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedBelief {
    pub mean: SVector<f64, 8>,
    pub cov: SMatrix<f64, 8, 8>,
}

impl AugmentedBelief {
    pub fn new(belief: &GaussianBelief, params: &DrivingNoiseParams) -> Self {
        let mut mean = SVector::<f64, 8>::zeros();
        mean.fixed_rows_mut::<4>(0).copy_from(&belief.mean);
        let mut cov = SMatrix::<f64, 8, 8>::zeros();
        cov.fixed_view_mut::<4, 4>(0, 0).copy_from(&belief.cov);
        for (i, v) in params.variances().into_iter().enumerate() {
            cov[(4 + i, 4 + i)] = v;
        }
        Self { mean, cov }
    }
}

/// Weighted particle approximation of the posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSet {
    pub states: Vec<VehicleState>,
    pub log_weights: Vec<f64>,
    pub normalized: bool,
}

impl ParticleSet {
    pub fn uniform(states: Vec<VehicleState>) -> Self {
        assert!(!states.is_empty());
        let lw = -(states.len() as f64).ln();
        let log_weights = vec![lw; states.len()];
        Self {
            states,
            log_weights,
            normalized: true,
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Normalizes the weights in the log domain so they sum to one.
    ///
    /// Errors with [`FilterError::DegenerateWeights`] when every weight is
    /// zero (or not a number), leaving the set untouched.
    pub fn normalize(&mut self) -> Result<(), FilterError> {
        let max = self
            .log_weights
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(FilterError::DegenerateWeights);
        }
        let sum: f64 = self.log_weights.iter().map(|lw| (lw - max).exp()).sum();
        let log_norm = max + sum.ln();
        for lw in &mut self.log_weights {
            *lw -= log_norm;
        }
        self.normalized = true;
        Ok(())
    }

    pub fn weights(&self) -> Vec<f64> {
        self.log_weights.iter().map(|lw| lw.exp()).collect()
    }

    /// Effective sample size 1 / sum(w^2) of the normalized weights.
    pub fn ess(&self) -> f64 {
        debug_assert!(self.normalized);
        let sumsq: f64 = self.log_weights.iter().map(|lw| (2.0 * lw).exp()).sum();
        1.0 / sumsq
    }

    /// Weighted mean and covariance with a circular heading component:
    /// the mean heading is the resultant-vector angle and heading residuals
    /// are wrapped.
    pub fn weighted_moments(&self) -> (Vector4<f64>, Matrix4<f64>) {
        debug_assert!(self.normalized);
        let mut sx = 0.0;
        let mut sy = 0.0;
        let mut sg = 0.0;
        let mut ssin = 0.0;
        let mut scos = 0.0;
        for (p, lw) in self.states.iter().zip(&self.log_weights) {
            let w = lw.exp();
            sx += w * p.x;
            sy += w * p.y;
            sg += w * p.gamma;
            ssin += w * p.theta.sin();
            scos += w * p.theta.cos();
        }
        let mean = Vector4::new(sx, sy, f64::atan2(ssin, scos), sg);
        let mut cov = Matrix4::zeros();
        for (p, lw) in self.states.iter().zip(&self.log_weights) {
            let w = lw.exp();
            let r = Vector4::new(
                p.x - mean[0],
                p.y - mean[1],
                wrap_angle(p.theta - mean[2]),
                p.gamma - mean[3],
            );
            cov.syger(w, &r, &r, 1.0);
        }
        cov.fill_upper_triangle_with_lower_triangle();
        (mean, cov)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterMode {
    /// Detections and aux measurements with BP association weights.
    #[default]
    Sss,
    /// Dead reckoning: detections and aux measurements ignored.
    Dr,
    /// Detections with the enumeration likelihood; a correctness harness
    /// limited to small gated problems.
    ExactAssoc,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterConfig {
    pub particle_count: usize,
    pub gamma_gate: f64,
    pub driving: DrivingNoiseParams,
    pub measurement: MeasurementNoiseParams,
    pub seed: u64,
    pub mode: FilterMode,
    pub threading: Threading,
}

impl FilterConfig {
    pub fn new(driving: DrivingNoiseParams, measurement: MeasurementNoiseParams, seed: u64) -> Self {
        Self {
            particle_count: DEFAULT_PARTICLE_COUNT,
            gamma_gate: DEFAULT_GAMMA_GATE,
            driving,
            measurement,
            seed,
            mode: FilterMode::default(),
            threading: Threading::default(),
        }
    }

    pub fn validate(&self) -> Result<(), FilterError> {
        if self.particle_count == 0 {
            return Err(FilterError::InvalidConfig(
                "particle_count must be at least 1".to_string(),
            ));
        }
        if !(self.gamma_gate > 0.0) || !self.gamma_gate.is_finite() {
            return Err(FilterError::InvalidConfig(format!(
                "gamma_gate must be positive and finite, got {}",
                self.gamma_gate
            )));
        }
        self.driving.validate()?;
        self.measurement.validate()?;
        Ok(())
    }
}

/// Lower-triangular L with L L^T = m for a positive semidefinite input.
///
/// Zero pivots produce zero columns (the input may be rank deficient); a
/// meaningfully negative pivot, or a zero pivot with a non-vanishing
/// remainder below it, returns None.
fn psd_lower<const N: usize>(m: &SMatrix<f64, N, N>) -> Option<SMatrix<f64, N, N>> {
    let scale = (0..N).map(|i| m[(i, i)].abs()).fold(1.0, f64::max);
    let pivot_tol = scale * 1e-12;
    let residual_tol = scale * 1e-9;
    let mut l = SMatrix::<f64, N, N>::zeros();
    for j in 0..N {
        let mut d = m[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d < -pivot_tol {
            return None;
        }
        if d <= pivot_tol {
            for i in j + 1..N {
                let mut s = m[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                if s.abs() > residual_tol {
                    return None;
                }
            }
        } else {
            let ljj = d.sqrt();
            l[(j, j)] = ljj;
            for i in j + 1..N {
                let mut s = m[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / ljj;
            }
        }
    }
    Some(l)
}

/// Matrix square root by lower-triangular factorization, retrying once with
/// [`COV_JITTER`] on the diagonal.
pub(crate) fn sqrt_lower<const N: usize>(
    m: &SMatrix<f64, N, N>,
) -> Result<SMatrix<f64, N, N>, FilterError> {
    if let Some(l) = psd_lower(m) {
        return Ok(l);
    }
    let jittered = m + SMatrix::<f64, N, N>::identity() * COV_JITTER;
    psd_lower(&jittered).ok_or(FilterError::NonPositiveDefinite)
}

/// Unscented prediction of the belief through the motion model.
///
/// The belief is augmented with the four driving noise terms (N = 8), the
/// 2N sigma points `mean ± columns of sqrt(N Sigma)` are propagated through
/// [`transition`], and the output moments use equal weights 1/(2N); the
/// unperturbed center point carries weight zero. The heading mean is the
/// resultant-vector angle and heading residuals are wrapped.
pub fn predict(
    belief: &GaussianBelief,
    u: &ControlInput,
    params: &DrivingNoiseParams,
    dt: f64,
) -> Result<GaussianBelief, FilterError> {
    params.validate()?;
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(ModelError::NonPositiveDt(dt).into());
    }
    let aug = AugmentedBelief::new(belief, params);
    let a = sqrt_lower(&(aug.cov * 8.0))?;
    let mut pts = [VehicleState::new(0.0, 0.0, 0.0, 0.0); 16];
    for j in 0..8 {
        let col = a.column(j);
        for (k, sign) in [1.0f64, -1.0].into_iter().enumerate() {
            let p = aug.mean + col * sign;
            let st = VehicleState::new(p[0], p[1], p[2], p[3]);
            let noise = [p[4], p[5], p[6], p[7]];
            pts[2 * j + k] = transition(&st, u, noise, dt)?;
        }
    }
    let w = 1.0 / 16.0;
    let mut sx = 0.0;
    let mut sy = 0.0;
    let mut sg = 0.0;
    let mut ssin = 0.0;
    let mut scos = 0.0;
    for p in &pts {
        sx += p.x;
        sy += p.y;
        sg += p.gamma;
        ssin += p.theta.sin();
        scos += p.theta.cos();
    }
    let mean = Vector4::new(sx * w, sy * w, f64::atan2(ssin, scos), sg * w);
    let mut cov = Matrix4::zeros();
    for p in &pts {
        let r = Vector4::new(
            p.x - mean[0],
            p.y - mean[1],
            wrap_angle(p.theta - mean[2]),
            p.gamma - mean[3],
        );
        cov.syger(w, &r, &r, 1.0);
    }
    cov.fill_upper_triangle_with_lower_triangle();
    GaussianBelief::new(mean, cov)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateDiagnostics {
    pub d_gated: usize,
    pub l_k: usize,
    pub ess: f64,
    pub bp: BpDiagnostics,
    /// Every particle weight vanished; the step fell back to the prediction.
    pub degenerate: bool,
}

/// Reusable buffers for [`update_with_scratch`]; one instance per filter.
#[derive(Debug, Default)]
pub struct UpdateScratch {
    states: Vec<VehicleState>,
    /// Per particle: heading sine, cosine, and aux log-likelihood.
    per: Vec<[f64; 3]>,
    tables: Vec<f64>,
    partials: Vec<f64>,
    log_weights: Vec<f64>,
    weights: Vec<f64>,
    geoms: Vec<LandmarkGeom>,
}

/// Particle correction of the predicted belief; see [`update_with_scratch`].
pub fn update<R: Rng + ?Sized>(
    pred: &GaussianBelief,
    dets: &DetectionSet,
    map: &LandmarkMap,
    cfg: &FilterConfig,
    rng: &mut R,
) -> Result<(GaussianBelief, ParticleSet, UpdateDiagnostics), FilterError> {
    update_with_scratch(pred, dets, map, cfg, rng, &mut UpdateScratch::default())
}

/// Particle positions drawn from the prediction stay within this many
/// standard deviations of the mean for any realistic particle count; the
/// tail mass beyond it is far below one particle in a million.
const REACH_SIGMA: f64 = 5.0;

/// True when a particle drawn from the prediction could plausibly cross a
/// gated landmark: some gated center lies within the sonar's slant range
/// plus the landmark extent plus the particle cloud's positional spread.
fn any_landmark_reachable(
    map: &LandmarkMap,
    gated: &GatedSet,
    pred: &GaussianBelief,
    r_max: f64,
) -> bool {
    if gated.is_empty() {
        return false;
    }
    let pos = pred.position_mean();
    let pc = pred.position_cov();
    let half_trace = 0.5 * (pc[(0, 0)] + pc[(1, 1)]);
    let half_diff = 0.5 * (pc[(0, 0)] - pc[(1, 1)]);
    let lambda_max = half_trace + (half_diff * half_diff + pc[(0, 1)] * pc[(0, 1)]).sqrt();
    let spread = REACH_SIGMA * lambda_max.max(0.0).sqrt();
    gated.indices.iter().any(|&i| {
        let m = &map.landmarks()[i];
        let reach = r_max + m.half_diagonal() + spread;
        let dx = m.x - pos.x;
        let dy = m.y - pos.y;
        dx * dx + dy * dy <= reach * reach
    })
}

/// Exact conditioning of the prediction on the compass and altimeter: the
/// Kalman update for a linear measurement of (theta, gamma) with the
/// heading innovation wrapped. This is the infinite-sample limit of the
/// particle reweighting when the detection factors cannot separate
/// particles, so it is used in place of sampling there.
fn aux_conditioned(
    pred: &GaussianBelief,
    dets: &DetectionSet,
    params: &MeasurementNoiseParams,
) -> Result<GaussianBelief, FilterError> {
    let p = &pred.cov;
    let r = Matrix2::new(
        params.sigma_c * params.sigma_c,
        0.0,
        0.0,
        params.sigma_h * params.sigma_h,
    );
    let s = Matrix2::new(p[(2, 2)], p[(2, 3)], p[(3, 2)], p[(3, 3)]) + r;
    let s_inv = s.try_inverse().ok_or(FilterError::NonPositiveDefinite)?;
    // P H^T is the (theta, gamma) column pair of P.
    let col_theta: Vector4<f64> = p.column(2).into();
    let col_gamma: Vector4<f64> = p.column(3).into();
    let ph = SMatrix::<f64, 4, 2>::from_columns(&[col_theta, col_gamma]);
    let k = ph * s_inv;
    let nu = Vector2::new(
        wrap_angle(dets.heading_meas - pred.mean[2]),
        dets.altitude_meas - pred.mean[3],
    );
    // Joseph form keeps the covariance symmetric positive semidefinite.
    let mut i_kh = Matrix4::identity();
    for row in 0..4 {
        i_kh[(row, 2)] -= k[(row, 0)];
        i_kh[(row, 3)] -= k[(row, 1)];
    }
    let cov = i_kh * p * i_kh.transpose() + k * r * k.transpose();
    GaussianBelief::new(pred.mean + k * nu, cov)
}

/// Particle correction of the predicted belief.
///
/// Samples `cfg.particle_count` particles from the prediction, weights them
/// by the aux likelihood plus the association-marginalized detection
/// likelihood (with BP weights computed once from the particle-averaged
/// factor table), extracts the posterior Gaussian from the weighted set
/// before resampling, and returns the systematically resampled set.
/// Steps whose gated landmarks are beyond every particle's reach skip the
/// sampling and condition on the aux measurements in closed form.
///
/// If every weight vanishes the update is abandoned: the prediction is
/// returned unchanged with `degenerate` set in the diagnostics.
pub fn update_with_scratch<R: Rng + ?Sized>(
    pred: &GaussianBelief,
    dets: &DetectionSet,
    map: &LandmarkMap,
    cfg: &FilterConfig,
    rng: &mut R,
    scratch: &mut UpdateScratch,
) -> Result<(GaussianBelief, ParticleSet, UpdateDiagnostics), FilterError> {
    cfg.validate()?;
    let n = cfg.particle_count;
    let params = &cfg.measurement;

    // Dead reckoning strips detections and aux measurements, so the pass
    // conditions on nothing and the posterior is the prediction itself.
    // Return it directly instead of re-estimating it from samples, which
    // would only add Monte Carlo noise. The token particle at the mean
    // keeps the set's nonempty invariant.
    if cfg.mode == FilterMode::Dr {
        return Ok((
            pred.clone(),
            ParticleSet::uniform(vec![pred.state()]),
            UpdateDiagnostics {
                d_gated: 0,
                l_k: 0,
                ess: n as f64,
                bp: BpDiagnostics {
                    iterations: 0,
                    converged: true,
                },
                degenerate: false,
            },
        ));
    }

    let gated = gate(
        map,
        pred.position_mean(),
        pred.position_cov(),
        params.r_max,
        cfg.gamma_gate,
    )?;
    let d_gated = gated.len();
    let l_k = dets.detections.len();

    // When no gated landmark lies within any particle's possible sonar
    // reach, no particle can cross anything: detection factors are the
    // same for every particle (detections are all clutter under the model)
    // and the likelihood varies only through the aux measurements. The
    // posterior then has the closed form below; the sampled estimator
    // would merely scatter around it, and that scatter compounds into a
    // position random walk over long detection-free stretches.
    if !any_landmark_reachable(map, &gated, pred, params.r_max) {
        let post = aux_conditioned(pred, dets, params)?;
        return Ok((
            post.clone(),
            ParticleSet::uniform(vec![post.state()]),
            UpdateDiagnostics {
                d_gated,
                l_k,
                ess: n as f64,
                bp: BpDiagnostics {
                    iterations: 0,
                    converged: true,
                },
                degenerate: false,
            },
        ));
    }

    if cfg.mode == FilterMode::ExactAssoc && d_gated * l_k > MAX_ENUMERATION_PRODUCT {
        return Err(AssociationError::EnumerationTooLarge {
            num_landmarks: d_gated,
            num_detections: l_k,
        }
        .into());
    }

    // Proposal: the predicted Gaussian.
    let a = sqrt_lower(&pred.cov)?;
    scratch.states.clear();
    scratch.states.reserve(n);
    for _ in 0..n {
        let z = Vector4::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        let p = pred.mean + a * z;
        scratch.states.push(VehicleState::new(p[0], p[1], p[2], p[3]));
    }
    let states: &[VehicleState] = &scratch.states;

    // Per-particle trig, aux log-likelihood, and association factor tables;
    // chunk partial sums accumulate the averaged table for BP.
    scratch.geoms.clear();
    scratch
        .geoms
        .extend(gated.indices.iter().map(|&i| LandmarkGeom::new(map.landmarks()[i])));
    let row = l_k + 1;
    let table_len = d_gated * row;
    scratch.per.clear();
    scratch.per.resize(n, [0.0; 3]);
    if table_len > 0 {
        let ctx = FactorContext::new(&scratch.geoms, &dets.detections, params);
        scratch.tables.clear();
        scratch.tables.resize(n * table_len, 0.0);
        let n_chunks = n.div_ceil(CHUNK);
        scratch.partials.clear();
        scratch.partials.resize(n_chunks * table_len, 0.0);
        for_each_chunk3(
            cfg.threading,
            &mut scratch.tables,
            CHUNK * table_len,
            &mut scratch.per,
            CHUNK,
            &mut scratch.partials,
            table_len,
            |ci, ct, cp, cpart| {
                for (j, per) in cp.iter_mut().enumerate() {
                    let st = &states[ci * CHUNK + j];
                    let (s, c) = st.theta.sin_cos();
                    let aux = aux_log_likelihood(dets, st, params);
                    *per = [s, c, aux];
                    let t = &mut ct[j * table_len..(j + 1) * table_len];
                    match ping_footprint_trig(st, params.r_max, s, c) {
                        Ok(fp) => ctx.fill(st, &fp, t),
                        Err(_) => {
                            // No footprint at this altitude: nothing is seen.
                            for d in 0..d_gated {
                                t[d * row] = 1.0;
                                t[d * row + 1..(d + 1) * row].fill(0.0);
                            }
                        }
                    }
                    for (acc, v) in cpart.iter_mut().zip(t.iter()) {
                        *acc += *v;
                    }
                }
            },
        );
    } else {
        for_each_chunk(cfg.threading, &mut scratch.per, CHUNK, |start, cp| {
            for (j, per) in cp.iter_mut().enumerate() {
                let st = &states[start + j];
                let (s, c) = st.theta.sin_cos();
                *per = [s, c, aux_log_likelihood(dets, st, params)];
            }
        });
    }

    // Association weights, once per step from the particle-averaged table.
    let (kappa, bp) = if cfg.mode == FilterMode::Sss && d_gated > 0 && l_k > 0 {
        let mut avg = vec![0.0; table_len];
        for chunk in scratch.partials.chunks_exact(table_len) {
            for (s, v) in avg.iter_mut().zip(chunk) {
                *s += *v;
            }
        }
        let inv = 1.0 / n as f64;
        for v in &mut avg {
            *v *= inv;
        }
        bp_kappa(&DetectionFactors::from_values(d_gated, l_k, avg))
    } else {
        (
            AssociationWeights::uniform(d_gated, l_k),
            BpDiagnostics {
                iterations: 0,
                converged: true,
            },
        )
    };

    // Log weights: aux plus the detection factor.
    scratch.log_weights.clear();
    scratch.log_weights.resize(n, 0.0);
    if table_len > 0 {
        let tables: &[f64] = &scratch.tables;
        let per: &[[f64; 3]] = &scratch.per;
        let exact = cfg.mode == FilterMode::ExactAssoc;
        for_each_chunk(cfg.threading, &mut scratch.log_weights, CHUNK, |start, lw| {
            for (j, out) in lw.iter_mut().enumerate() {
                let i = start + j;
                let t = &tables[i * table_len..(i + 1) * table_len];
                let det_ll = if exact {
                    exact_log_likelihood_values(d_gated, l_k, t)
                        .expect("enumeration size checked before the particle pass")
                } else {
                    approx_log_likelihood_values(t, &kappa)
                };
                *out = per[i][2] + det_ll;
            }
        });
    } else {
        for (out, per) in scratch.log_weights.iter_mut().zip(&scratch.per) {
            *out = per[2];
        }
    }

    // Normalize in the log domain.
    let max = scratch
        .log_weights
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        log::warn!("update degenerate: every particle weight vanished");
        return Ok((
            pred.clone(),
            ParticleSet::uniform(scratch.states.clone()),
            UpdateDiagnostics {
                d_gated,
                l_k,
                ess: n as f64,
                bp,
                degenerate: true,
            },
        ));
    }
    scratch.weights.clear();
    scratch.weights.reserve(n);
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    for lw in &scratch.log_weights {
        let w = (lw - max).exp();
        sum += w;
        sumsq += w * w;
        scratch.weights.push(w);
    }
    let ess = sum * sum / sumsq;
    let inv_sum = 1.0 / sum;
    for w in &mut scratch.weights {
        *w *= inv_sum;
    }

    // Posterior moments from the weighted particles, before resampling.
    let mut sx = 0.0;
    let mut sy = 0.0;
    let mut sg = 0.0;
    let mut ssin = 0.0;
    let mut scos = 0.0;
    for ((p, per), w) in states.iter().zip(&scratch.per).zip(&scratch.weights) {
        sx += w * p.x;
        sy += w * p.y;
        sg += w * p.gamma;
        ssin += w * per[0];
        scos += w * per[1];
    }
    let mean = Vector4::new(sx, sy, f64::atan2(ssin, scos), sg);
    let mut cov = Matrix4::zeros();
    for (p, w) in states.iter().zip(&scratch.weights) {
        let r = Vector4::new(
            p.x - mean[0],
            p.y - mean[1],
            wrap_angle(p.theta - mean[2]),
            p.gamma - mean[3],
        );
        cov.syger(*w, &r, &r, 1.0);
    }
    cov.fill_upper_triangle_with_lower_triangle();
    let belief = GaussianBelief::new(mean, cov)?;

    let resampled = systematic_draw(states, &scratch.weights, n, rng);
    Ok((
        belief,
        ParticleSet::uniform(resampled),
        UpdateDiagnostics {
            d_gated,
            l_k,
            ess,
            bp,
            degenerate: false,
        },
    ))
}

fn systematic_draw<R: Rng + ?Sized>(
    states: &[VehicleState],
    weights: &[f64],
    count: usize,
    rng: &mut R,
) -> Vec<VehicleState> {
    debug_assert_eq!(states.len(), weights.len());
    let u: f64 = rng.gen();
    let mut out = Vec::with_capacity(count);
    let mut i = 0;
    let mut cum = weights[0];
    for j in 0..count {
        let target = (j as f64 + u) / count as f64;
        while cum < target && i + 1 < states.len() {
            i += 1;
            cum += weights[i];
        }
        out.push(states[i]);
    }
    out
}

/// Systematic resampling to `count` equally weighted particles.
///
/// One uniform draw offsets an evenly spaced comb over the cumulative
/// weights, so a particle with weight w appears floor(count*w) or
/// ceil(count*w) times.
pub fn resample<R: Rng + ?Sized>(p: &ParticleSet, count: usize, rng: &mut R) -> ParticleSet {
    assert!(p.normalized, "resample requires normalized weights");
    assert!(count > 0);
    let weights = p.weights();
    ParticleSet::uniform(systematic_draw(&p.states, &weights, count, rng))
}

/// One per-step estimate with its update diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub timestamp: f64,
    pub belief: GaussianBelief,
    pub diag: UpdateDiagnostics,
    /// Update wall time in microseconds (fractional, always positive).
    pub update_micros: f64,
}

/// Runs the filter over a time-ordered input stream.
///
/// Each element pairs the control held from the previous step's timestamp
/// with the measurements taken at its own timestamp
/// (`DetectionSet::timestamp`); the first element's control is applied
/// between it and the second. The belief is corrected at the first
/// timestamp without prediction, then alternates predict and update. All
/// randomness derives from `cfg.seed`.
pub fn run(
    initial: &GaussianBelief,
    inputs: &[(ControlInput, DetectionSet)],
    map: &LandmarkMap,
    cfg: &FilterConfig,
) -> Result<Vec<StepRecord>, FilterError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(FILTER_RNG_STREAM);
    let mut scratch = UpdateScratch::default();
    let mut belief = initial.clone();
    let mut records = Vec::with_capacity(inputs.len());
    let mut prev_t: Option<f64> = None;
    for (k, (_, dets)) in inputs.iter().enumerate() {
        let t = dets.timestamp;
        if let Some(pt) = prev_t {
            let dt = t - pt;
            if !(dt > 0.0) || !dt.is_finite() {
                return Err(FilterError::NonMonotonicTimestamps { step: k, dt });
            }
            let u_prev = &inputs[k - 1].0;
            belief = predict(&belief, u_prev, &cfg.driving, dt).map_err(at_step(k))?;
        }
        let start = std::time::Instant::now();
        let (post, _, diag) =
            update_with_scratch(&belief, dets, map, cfg, &mut rng, &mut scratch).map_err(at_step(k))?;
        let update_micros = start.elapsed().as_secs_f64() * 1e6;
        belief = post;
        records.push(StepRecord {
            timestamp: t,
            belief: belief.clone(),
            diag,
            update_micros,
        });
        prev_t = Some(t);
    }
    Ok(records)
}
