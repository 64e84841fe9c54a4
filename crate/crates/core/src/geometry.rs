//! Planar geometry for side-scan sonar pings over rectangular landmarks.
//!
//! A ping illuminates a line segment on the seafloor perpendicular to the
//! vehicle heading. A landmark is an oriented rectangle. The crossing of the
//! two produces the pair of slant ranges that the sonar reports; everything
//! downstream (likelihoods, association, filtering) is built on top of it.
//!
//! Conventions: x east, y north, headings in radians measured
//! counter-clockwise from east and wrapped to (-pi, pi]. Port is the left
//! side of the heading and maps to negative signed ranges.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec2 = Vector2<f64>;

/// Tolerance for the segment intersection predicates, in meters.
pub const INTERSECTION_EPS: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("altitude {altitude} is not below the sonar range {r_max}")]
    AltitudeExceedsRange { altitude: f64, r_max: f64 },
    #[error("invalid landmark: {0}")]
    InvalidLandmark(String),
}

/// Wraps an angle to (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let r = a.rem_euclid(two_pi);
    if r > std::f64::consts::PI {
        r - two_pi
    } else {
        r
    }
}

/// Vehicle state: planar position, heading, and altitude above the seafloor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    /// Heading in (-pi, pi], counter-clockwise from east.
    pub theta: f64,
    /// Altitude above the seafloor, >= 0.
    pub gamma: f64,
}

impl VehicleState {
    /// Builds a state, wrapping the heading and clamping altitude at zero.
    pub fn new(x: f64, y: f64, theta: f64, gamma: f64) -> Self {
        Self {
            x,
            y,
            theta: wrap_angle(theta),
            gamma: gamma.max(0.0),
        }
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }
}

/// Oriented rectangular landmark on the seafloor.
///
/// `theta` orients the length axis, with the same angle convention as the
/// vehicle heading; `length` and `width` are the full side extents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Landmark {
    pub id: u32,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    #[serde(rename = "l")]
    pub length: f64,
    #[serde(rename = "w")]
    pub width: f64,
}

impl Landmark {
    pub fn new(
        id: u32,
        x: f64,
        y: f64,
        theta: f64,
        length: f64,
        width: f64,
    ) -> Result<Self, GeometryError> {
        let lm = Self {
            id,
            x,
            y,
            theta: wrap_angle(theta),
            length,
            width,
        };
        lm.validate()?;
        Ok(lm)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.length > 0.0) || !self.length.is_finite() {
            return Err(GeometryError::InvalidLandmark(format!(
                "length must be positive and finite, got {}",
                self.length
            )));
        }
        if !(self.width > 0.0) || !self.width.is_finite() {
            return Err(GeometryError::InvalidLandmark(format!(
                "width must be positive and finite, got {}",
                self.width
            )));
        }
        if ![self.x, self.y, self.theta].iter().all(|v| v.is_finite()) {
            return Err(GeometryError::InvalidLandmark(
                "pose must be finite".to_string(),
            ));
        }
        Ok(())
    }

    pub fn center(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    /// Half of the rectangle diagonal; bounds the center-to-boundary distance.
    pub fn half_diagonal(&self) -> f64 {
        0.5 * (self.length * self.length + self.width * self.width).sqrt()
    }
}

/// A collection of landmarks with unique ids, loaded from or saved to a map
/// file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LandmarkMap {
    landmarks: Vec<Landmark>,
}

impl LandmarkMap {
    pub fn new(landmarks: Vec<Landmark>) -> Result<Self, GeometryError> {
        let mut ids: Vec<u32> = landmarks.iter().map(|m| m.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(GeometryError::InvalidLandmark(
                "duplicate landmark id in map".to_string(),
            ));
        }
        for lm in &landmarks {
            lm.validate()?;
        }
        Ok(Self { landmarks })
    }

    pub fn landmarks(&self) -> &[Landmark] {
        &self.landmarks
    }

    pub fn len(&self) -> usize {
        self.landmarks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.landmarks.is_empty()
    }
}

/// Directed segment between two points on the seafloor plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub begin: Vec2,
    pub end: Vec2,
}

impl Segment {
    pub fn new(begin: Vec2, end: Vec2) -> Self {
        Self { begin, end }
    }

    pub fn length(&self) -> f64 {
        (self.end - self.begin).norm()
    }
}

/// Seafloor segment illuminated by one ping, perpendicular to the heading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PingFootprint {
    pub port_end: Vec2,
    pub starboard_end: Vec2,
}

impl PingFootprint {
    pub fn segment(&self) -> Segment {
        Segment::new(self.port_end, self.starboard_end)
    }
}

/// Endpoints of the seafloor segment a ping insonifies.
///
/// The segment runs through the vehicle's (x, y) perpendicular to the
/// heading; each half extends sqrt(r_max^2 - gamma^2) to the side, the
/// horizontal reach of a sonar with slant range `r_max` at altitude gamma.
pub fn ping_footprint(state: &VehicleState, r_max: f64) -> Result<PingFootprint, GeometryError> {
    let (s, c) = state.theta.sin_cos();
    ping_footprint_trig(state, r_max, s, c)
}

/// [`ping_footprint`] with the heading sine and cosine precomputed, for
/// callers that already hold them.
pub fn ping_footprint_trig(
    state: &VehicleState,
    r_max: f64,
    sin_theta: f64,
    cos_theta: f64,
) -> Result<PingFootprint, GeometryError> {
    if !(r_max > 0.0) || state.gamma >= r_max {
        return Err(GeometryError::AltitudeExceedsRange {
            altitude: state.gamma,
            r_max,
        });
    }
    let half = (r_max * r_max - state.gamma * state.gamma).sqrt();
    // Port direction is the heading rotated +90 degrees.
    let port_dir = Vec2::new(-sin_theta, cos_theta);
    let pos = state.position();
    Ok(PingFootprint {
        port_end: pos + half * port_dir,
        starboard_end: pos - half * port_dir,
    })
}

/// The four boundary edges of a landmark rectangle.
///
/// Corners are the center offset by the rotated half extents; each corner
/// appears as the begin of one edge and the end of another, so the endpoint
/// set is exactly the four corners.
pub fn landmark_edges(m: &Landmark) -> [Segment; 4] {
    let (s, c) = m.theta.sin_cos();
    let hl = 0.5 * m.length;
    let hw = 0.5 * m.width;
    let center = m.center();
    // Rotated corner offsets for (+hl, +hw) and (+hl, -hw).
    let c1 = Vec2::new(c * hl - s * hw, s * hl + c * hw);
    let c2 = Vec2::new(c * hl + s * hw, s * hl - c * hw);
    [
        Segment::new(center - c1, center + c2),
        Segment::new(center - c1, center - c2),
        Segment::new(center + c1, center - c2),
        Segment::new(center + c1, center + c2),
    ]
}

/// Result of intersecting two segments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SegmentIntersection {
    Disjoint,
    Point(Vec2),
    /// Collinear overlap, reported by its two endpoints.
    Overlap(Vec2, Vec2),
}

fn cross2(a: Vec2, b: Vec2) -> f64 {
    a.x * b.y - a.y * b.x
}

/// Intersects two segments with orientation predicates.
///
/// Parallel non-collinear segments are disjoint; collinear segments report
/// the overlap interval endpoints. Tolerances are [`INTERSECTION_EPS`] in
/// meters, applied perpendicular to the segments and at their ends.
pub fn segment_intersection(a: &Segment, b: &Segment) -> SegmentIntersection {
    let r = a.end - a.begin;
    let s = b.end - b.begin;
    let r_len = r.norm();
    let s_len = s.norm();
    if r_len <= INTERSECTION_EPS || s_len <= INTERSECTION_EPS {
        // Degenerate input: fall back to a point-on-segment test.
        let (p, seg, len) = if r_len <= INTERSECTION_EPS {
            (a.begin, b, s_len)
        } else {
            (b.begin, a, r_len)
        };
        if len <= INTERSECTION_EPS {
            return if (a.begin - b.begin).norm() <= INTERSECTION_EPS {
                SegmentIntersection::Point(a.begin)
            } else {
                SegmentIntersection::Disjoint
            };
        }
        let d = seg.end - seg.begin;
        let t = ((p - seg.begin).dot(&d) / (len * len)).clamp(0.0, 1.0);
        let nearest = seg.begin + t * d;
        return if (p - nearest).norm() <= INTERSECTION_EPS {
            SegmentIntersection::Point(nearest)
        } else {
            SegmentIntersection::Disjoint
        };
    }

    let rxs = cross2(r, s);
    let qmp = b.begin - a.begin;
    // Perpendicular distance from b.begin to the line of a, in meters.
    let qpxr = cross2(qmp, r);

    if rxs.abs() <= INTERSECTION_EPS * r_len * s_len {
        // Parallel. Collinear only if b.begin lies on the line of a.
        if (qpxr / r_len).abs() > INTERSECTION_EPS {
            return SegmentIntersection::Disjoint;
        }
        let inv = 1.0 / (r_len * r_len);
        let t0 = (b.begin - a.begin).dot(&r) * inv;
        let t1 = (b.end - a.begin).dot(&r) * inv;
        let (lo, hi) = if t0 <= t1 { (t0, t1) } else { (t1, t0) };
        let tol = INTERSECTION_EPS / r_len;
        let lo = lo.max(0.0);
        let hi = hi.min(1.0);
        if lo > hi + tol {
            return SegmentIntersection::Disjoint;
        }
        let p0 = a.begin + lo.clamp(0.0, 1.0) * r;
        let p1 = a.begin + hi.clamp(0.0, 1.0) * r;
        if (p1 - p0).norm() <= INTERSECTION_EPS {
            return SegmentIntersection::Point(p0);
        }
        return SegmentIntersection::Overlap(p0, p1);
    }

    let t = cross2(qmp, s) / rxs;
    let u = qpxr / rxs;
    let t_tol = INTERSECTION_EPS / r_len;
    let u_tol = INTERSECTION_EPS / s_len;
    if t < -t_tol || t > 1.0 + t_tol || u < -u_tol || u > 1.0 + u_tol {
        return SegmentIntersection::Disjoint;
    }
    let p = a.begin + t.clamp(0.0, 1.0) * r;
    SegmentIntersection::Point(p)
}

/// Tests whether a point lies inside a landmark rectangle, inflated (or
/// deflated, if negative) by `margin` on each side.
pub fn point_in_landmark(p: &Vec2, m: &Landmark, margin: f64) -> bool {
    let (s, c) = m.theta.sin_cos();
    let dx = p.x - m.x;
    let dy = p.y - m.y;
    let u = c * dx + s * dy;
    let v = -s * dx + c * dy;
    u.abs() <= 0.5 * m.length + margin && v.abs() <= 0.5 * m.width + margin
}

/// One ping's crossing of one landmark: the nearest and farthest insonified
/// boundary points with their slant ranges.
///
/// Signed ranges are negative on the port side, positive on starboard.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LandmarkCrossing {
    pub landmark_id: u32,
    pub near_point: Vec2,
    pub far_point: Vec2,
    /// Slant range to `near_point`; 0 < near_range <= far_range.
    pub near_range: f64,
    /// Slant range to `far_point`, clamped to r_max when the landmark
    /// extends past the footprint end.
    pub far_range: f64,
    pub near_signed: f64,
    pub far_signed: f64,
}

/// Precomputed per-landmark geometry, reused across many crossing queries
/// against the same landmark.
#[derive(Debug, Clone)]
pub struct LandmarkGeom {
    pub landmark: Landmark,
    edges: [Segment; 4],
}

impl LandmarkGeom {
    pub fn new(landmark: Landmark) -> Self {
        Self {
            edges: landmark_edges(&landmark),
            landmark,
        }
    }
}

/// Computes the slant-range crossing of a ping with a landmark.
///
/// Returns `None` when the footprint segment does not touch the rectangle.
/// When the rectangle straddles a footprint end, the far range clamps to
/// `r_max`; when it covers the nadir point below the vehicle, the near range
/// is the altitude and both signs follow the farther, off-nadir side.
pub fn crossing(
    state: &VehicleState,
    m: &Landmark,
    r_max: f64,
) -> Result<Option<LandmarkCrossing>, GeometryError> {
    let fp = ping_footprint(state, r_max)?;
    let geom = LandmarkGeom::new(*m);
    Ok(crossing_with_footprint(state, &fp, &geom, r_max))
}

/// Crossing against precomputed landmark geometry; hot-path form of
/// [`crossing`].
pub fn crossing_with_footprint(
    state: &VehicleState,
    fp: &PingFootprint,
    geom: &LandmarkGeom,
    r_max: f64,
) -> Option<LandmarkCrossing> {
    let pos = state.position();
    let seg = fp.segment();
    let gamma2 = state.gamma * state.gamma;

    // Candidate boundary points of the footprint/rectangle overlap interval:
    // edge intersections, footprint ends inside the rectangle, and the nadir
    // point when the rectangle covers the vehicle position.
    let mut pts = [Vec2::zeros(); 11];
    let mut n = 0usize;
    for edge in &geom.edges {
        match segment_intersection(&seg, edge) {
            SegmentIntersection::Disjoint => {}
            SegmentIntersection::Point(p) => {
                pts[n] = p;
                n += 1;
            }
            SegmentIntersection::Overlap(p, q) => {
                pts[n] = p;
                pts[n + 1] = q;
                n += 2;
            }
        }
    }
    let mut port_end_inside = false;
    let mut starboard_end_inside = false;
    if point_in_landmark(&fp.port_end, &geom.landmark, INTERSECTION_EPS) {
        pts[n] = fp.port_end;
        n += 1;
        port_end_inside = true;
    }
    if point_in_landmark(&fp.starboard_end, &geom.landmark, INTERSECTION_EPS) {
        pts[n] = fp.starboard_end;
        n += 1;
        starboard_end_inside = true;
    }
    if point_in_landmark(&pos, &geom.landmark, INTERSECTION_EPS) {
        pts[n] = pos;
        n += 1;
    }
    if n == 0 {
        return None;
    }

    let heading = Vec2::new(state.theta.cos(), state.theta.sin());
    let mut near_i = 0usize;
    let mut far_i = 0usize;
    let mut near_r2 = f64::INFINITY;
    let mut far_r2 = f64::NEG_INFINITY;
    let mut side = 0.0f64;
    let mut side_mag = -1.0f64;
    for (i, p) in pts[..n].iter().enumerate() {
        let d = p - pos;
        let r2 = d.norm_squared() + gamma2;
        if r2 < near_r2 {
            near_r2 = r2;
            near_i = i;
        }
        if r2 > far_r2 {
            far_r2 = r2;
            far_i = i;
        }
        let cz = cross2(heading, d);
        if cz.abs() > side_mag {
            side_mag = cz.abs();
            // Positive cross-z is port, which carries negative sign.
            side = if cz > 0.0 { -1.0 } else { 1.0 };
        }
    }
    if side == 0.0 {
        side = 1.0;
    }

    let near_point = pts[near_i];
    let far_point = pts[far_i];
    let near_range = near_r2.sqrt();
    let mut far_range = far_r2.sqrt().min(r_max);
    // A footprint end inside the rectangle means the landmark extends past
    // sonar reach; the far return saturates at r_max exactly.
    let clamped = (port_end_inside && far_point == fp.port_end)
        || (starboard_end_inside && far_point == fp.starboard_end)
        || (far_range - r_max).abs() < INTERSECTION_EPS;
    if clamped {
        far_range = r_max;
    }

    Some(LandmarkCrossing {
        landmark_id: geom.landmark.id,
        near_point,
        far_point,
        near_range,
        far_range,
        near_signed: side * near_range,
        far_signed: side * far_range,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn state(x: f64, y: f64, theta: f64, gamma: f64) -> VehicleState {
        VehicleState::new(x, y, theta, gamma)
    }

    fn lm(x: f64, y: f64, theta: f64, l: f64, w: f64) -> Landmark {
        Landmark::new(1, x, y, theta, l, w).unwrap()
    }

    #[test]
    fn wrap_angle_maps_to_half_open_interval() {
        use std::f64::consts::PI;
        assert_relative_eq!(wrap_angle(0.0), 0.0);
        assert_relative_eq!(wrap_angle(PI), PI);
        assert_relative_eq!(wrap_angle(-PI), PI);
        assert_relative_eq!(wrap_angle(3.0 * PI), PI);
        assert_relative_eq!(wrap_angle(PI + 0.1), -PI + 0.1, epsilon = 1e-12);
        assert_relative_eq!(wrap_angle(-7.0), -7.0 + 2.0 * PI, epsilon = 1e-12);
    }

    #[test]
    fn footprint_half_length_follows_altitude() {
        let fp = ping_footprint(&state(0.0, 0.0, 0.0, 5.0), 20.0).unwrap();
        let half = 375.0f64.sqrt();
        assert_relative_eq!(fp.port_end.x, 0.0, epsilon = 1e-9);
        assert_relative_eq!(fp.port_end.y, half, epsilon = 1e-9);
        assert_relative_eq!(fp.starboard_end.x, 0.0, epsilon = 1e-9);
        assert_relative_eq!(fp.starboard_end.y, -half, epsilon = 1e-9);
    }

    #[test]
    fn footprint_at_zero_altitude_reaches_full_range() {
        let fp = ping_footprint(&state(0.0, 0.0, std::f64::consts::FRAC_PI_2, 0.0), 20.0).unwrap();
        assert_relative_eq!(fp.port_end.x, -20.0, epsilon = 1e-9);
        assert_relative_eq!(fp.port_end.y, 0.0, epsilon = 1e-9);
        assert_relative_eq!(fp.starboard_end.x, 20.0, epsilon = 1e-9);
    }

    #[test]
    fn footprint_rejects_altitude_at_or_above_range() {
        let err = ping_footprint(&state(0.0, 0.0, 0.0, 20.0), 20.0).unwrap_err();
        assert!(matches!(err, GeometryError::AltitudeExceedsRange { .. }));
        assert!(ping_footprint(&state(0.0, 0.0, 0.0, 25.0), 20.0).is_err());
    }

    #[test]
    fn edges_of_axis_aligned_square() {
        let edges = landmark_edges(&lm(0.0, 10.0, 0.0, 2.0, 2.0));
        let mut corners: Vec<(i64, i64)> = edges
            .iter()
            .flat_map(|e| [e.begin, e.end])
            .map(|p| (p.x.round() as i64, p.y.round() as i64))
            .collect();
        corners.sort_unstable();
        corners.dedup();
        assert_eq!(corners, vec![(-1, 9), (-1, 11), (1, 9), (1, 11)]);
        for e in &edges {
            assert_relative_eq!(e.length(), 2.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn edges_match_independent_corner_construction_when_rotated() {
        // Oracle: rotate the axis-aligned 4x2 box corners by pi/2 about the
        // center (5, 5).
        let m = lm(5.0, 5.0, std::f64::consts::FRAC_PI_2, 4.0, 2.0);
        let mut expect: Vec<(f64, f64)> = [(2.0, 1.0), (2.0, -1.0), (-2.0, 1.0), (-2.0, -1.0)]
            .iter()
            .map(|&(u, v)| (5.0 - v, 5.0 + u))
            .collect();
        let mut corners: Vec<(f64, f64)> = landmark_edges(&m)
            .iter()
            .flat_map(|e| [e.begin, e.end])
            .map(|p| (p.x, p.y))
            .collect();
        let key = |p: &(f64, f64)| ((p.0 * 1e9).round() as i64, (p.1 * 1e9).round() as i64);
        corners.sort_by_key(key);
        corners.dedup_by_key(|p| key(p));
        expect.sort_by_key(key);
        assert_eq!(corners.len(), 4);
        for (c, e) in corners.iter().zip(&expect) {
            assert_relative_eq!(c.0, e.0, epsilon = 1e-9);
            assert_relative_eq!(c.1, e.1, epsilon = 1e-9);
        }
    }

    #[test]
    fn degenerate_landmark_is_rejected() {
        assert!(Landmark::new(1, 0.0, 0.0, 0.0, 0.0, 2.0).is_err());
        assert!(Landmark::new(1, 0.0, 0.0, 0.0, 2.0, -1.0).is_err());
        assert!(Landmark::new(1, 0.0, 0.0, f64::NAN, 2.0, 2.0).is_err());
    }

    #[test]
    fn map_rejects_duplicate_ids() {
        let a = Landmark::new(7, 0.0, 0.0, 0.0, 1.0, 1.0).unwrap();
        let b = Landmark::new(7, 5.0, 5.0, 0.0, 1.0, 1.0).unwrap();
        assert!(LandmarkMap::new(vec![a, b]).is_err());
    }

    #[test]
    fn crossing_port_side_square() {
        let c = crossing(&state(0.0, 0.0, 0.0, 5.0), &lm(0.0, 10.0, 0.0, 2.0, 2.0), 20.0)
            .unwrap()
            .unwrap();
        assert_relative_eq!(c.near_range, 106.0f64.sqrt(), epsilon = 1e-9);
        assert_relative_eq!(c.far_range, 146.0f64.sqrt(), epsilon = 1e-9);
        assert_relative_eq!(c.near_range, 10.295630, epsilon = 1e-6);
        assert_relative_eq!(c.far_range, 12.083046, epsilon = 1e-6);
        // North of an east-heading vehicle is port: negative signs.
        assert_relative_eq!(c.near_signed, -c.near_range);
        assert_relative_eq!(c.far_signed, -c.far_range);
        assert_relative_eq!(c.near_point.y, 9.0, epsilon = 1e-9);
        assert_relative_eq!(c.far_point.y, 11.0, epsilon = 1e-9);
    }

    #[test]
    fn crossing_starboard_side_has_positive_sign() {
        let c = crossing(
            &state(0.0, 0.0, 0.0, 5.0),
            &lm(0.0, -10.0, 0.0, 2.0, 2.0),
            20.0,
        )
        .unwrap()
        .unwrap();
        assert!(c.near_signed > 0.0 && c.far_signed > 0.0);
        assert_relative_eq!(c.near_range, 106.0f64.sqrt(), epsilon = 1e-9);
    }

    #[test]
    fn crossing_absent_beyond_footprint() {
        let c = crossing(&state(0.0, 0.0, 0.0, 5.0), &lm(0.0, 30.0, 0.0, 2.0, 2.0), 20.0).unwrap();
        assert!(c.is_none());
    }

    #[test]
    fn crossing_clamps_far_range_at_footprint_end() {
        let c = crossing(&state(0.0, 0.0, 0.0, 5.0), &lm(0.0, 19.0, 0.0, 4.0, 2.0), 20.0)
            .unwrap()
            .unwrap();
        assert_relative_eq!(c.near_range, 349.0f64.sqrt(), epsilon = 1e-9);
        assert_relative_eq!(c.near_range, 18.681542, epsilon = 1e-6);
        assert_eq!(c.far_range, 20.0);
        assert!(c.near_signed < 0.0 && c.far_signed < 0.0);
    }

    #[test]
    fn crossing_over_nadir_returns_altitude_as_near_range() {
        // Rectangle centered slightly starboard but covering the vehicle.
        let c = crossing(&state(0.0, 0.0, 0.0, 5.0), &lm(0.0, -2.0, 0.0, 8.0, 8.0), 20.0)
            .unwrap()
            .unwrap();
        assert_relative_eq!(c.near_range, 5.0, epsilon = 1e-9);
        // The bulk of the rectangle is starboard: both signs positive.
        assert!(c.near_signed > 0.0 && c.far_signed > 0.0);
        assert_relative_eq!(c.far_range, (36.0 + 25.0f64).sqrt(), epsilon = 1e-9);
    }

    #[test]
    fn crossing_signs_are_consistent() {
        let c = crossing(&state(0.0, 0.0, 0.0, 5.0), &lm(0.0, 12.0, 0.3, 6.0, 3.0), 20.0)
            .unwrap()
            .unwrap();
        assert_eq!(c.near_signed.signum(), c.far_signed.signum());
        assert_relative_eq!(c.near_signed.abs(), c.near_range);
        assert_relative_eq!(c.far_signed.abs(), c.far_range);
        assert!(c.near_range <= c.far_range);
        assert!(c.far_range <= 20.0);
    }

    #[test]
    fn segment_intersection_basic_cross() {
        let a = Segment::new(Vec2::new(-1.0, 0.0), Vec2::new(1.0, 0.0));
        let b = Segment::new(Vec2::new(0.0, -1.0), Vec2::new(0.0, 1.0));
        match segment_intersection(&a, &b) {
            SegmentIntersection::Point(p) => {
                assert_relative_eq!(p.x, 0.0, epsilon = 1e-12);
                assert_relative_eq!(p.y, 0.0, epsilon = 1e-12);
            }
            other => panic!("expected point, got {other:?}"),
        }
    }

    #[test]
    fn segment_intersection_parallel_disjoint() {
        let a = Segment::new(Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0));
        let b = Segment::new(Vec2::new(0.0, 1.0), Vec2::new(1.0, 1.0));
        assert_eq!(segment_intersection(&a, &b), SegmentIntersection::Disjoint);
    }

    #[test]
    fn segment_intersection_collinear_overlap() {
        let a = Segment::new(Vec2::new(0.0, 0.0), Vec2::new(4.0, 0.0));
        let b = Segment::new(Vec2::new(2.0, 0.0), Vec2::new(6.0, 0.0));
        match segment_intersection(&a, &b) {
            SegmentIntersection::Overlap(p, q) => {
                let (lo, hi) = if p.x <= q.x { (p, q) } else { (q, p) };
                assert_relative_eq!(lo.x, 2.0, epsilon = 1e-9);
                assert_relative_eq!(hi.x, 4.0, epsilon = 1e-9);
            }
            other => panic!("expected overlap, got {other:?}"),
        }
    }

    #[test]
    fn segment_intersection_touching_endpoints() {
        let a = Segment::new(Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0));
        let b = Segment::new(Vec2::new(1.0, 0.0), Vec2::new(2.0, 5.0));
        match segment_intersection(&a, &b) {
            SegmentIntersection::Point(p) => assert_relative_eq!(p.x, 1.0, epsilon = 1e-9),
            other => panic!("expected point, got {other:?}"),
        }
    }
}
