//! 2-D primitives: quadratic Bézier trajectories, arc length, visibility and
//! the canonical per-turn frame sampling.
//!
//! Trigonometry goes through `libm` so that generated scenes are bit-identical
//! across platforms.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::EntityId;

/// Movement frames per turn.
pub const MOVEMENT_FRAMES: usize = 10;
/// View-shift frames at the start of every turn after the first.
pub const SHIFT_FRAMES: usize = 5;
/// Synchronized samples used by overlap checks.
pub const DEFAULT_SEPARATION_SAMPLES: usize = 64;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("curve parameter {0} outside [0, 1]")]
    ParameterOutOfRange(f64),
    #[error("separation check needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("view shift supplied for turn 1")]
    ShiftOnFirstTurn,
    #[error("turn {0} requires a view shift")]
    MissingShift(usize),
    #[error("turn index must be at least 1")]
    ZeroTurn,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const ORIGIN: Point = Point { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    /// Unit vector at `angle` radians, scaled by `r`.
    pub fn polar(r: f64, angle: f64) -> Self {
        Point::new(r * libm::cos(angle), r * libm::sin(angle))
    }

    pub fn norm(self) -> f64 {
        (self.x * self.x + self.y * self.y).sqrt()
    }

    pub fn distance(self, other: Point) -> f64 {
        (self - other).norm()
    }

    pub fn dot(self, other: Point) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn lerp(self, other: Point, t: f64) -> Point {
        self + (other - self) * t
    }

    /// Angle of the vector in `(-π, π]`.
    pub fn angle(self) -> f64 {
        libm::atan2(self.y, self.x)
    }

    pub fn map(self, f: impl Fn(f64) -> f64) -> Point {
        Point::new(f(self.x), f(self.y))
    }
}

impl Add for Point {
    type Output = Point;
    fn add(self, rhs: Point) -> Point {
        Point::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Point {
    type Output = Point;
    fn sub(self, rhs: Point) -> Point {
        Point::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Point {
    type Output = Point;
    fn mul(self, rhs: f64) -> Point {
        Point::new(self.x * rhs, self.y * rhs)
    }
}

impl Neg for Point {
    type Output = Point;
    fn neg(self) -> Point {
        Point::new(-self.x, -self.y)
    }
}

/// Sampled movement parameters that produced a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MoveParams {
    pub r1: f64,
    pub r2: f64,
    /// Heading carried in from the previous turn.
    pub theta_prev: f64,
    pub delta_theta: f64,
}

impl MoveParams {
    /// Heading carried out to the next turn.
    pub fn heading_out(&self) -> f64 {
        self.theta_prev + self.delta_theta
    }
}

/// One turn of movement for one entity: a quadratic Bézier curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub p0: Point,
    pub p1: Point,
    pub p2: Point,
    pub params: MoveParams,
}

impl Trajectory {
    /// Curve point without the domain check. Callers guarantee `t ∈ [0, 1]`.
    pub fn eval(&self, t: f64) -> Point {
        if t == 0.0 {
            return self.p0;
        }
        if t == 1.0 {
            return self.p2;
        }
        // Offsets from p0 keep a motionless curve exactly in place.
        let s = 1.0 - t;
        self.p0 + (self.p1 - self.p0) * (2.0 * s * t) + (self.p2 - self.p0) * (t * t)
    }

    pub fn displacement(&self) -> Point {
        self.p2 - self.p0
    }

    /// Stays at `at` for the whole turn.
    pub fn stationary(at: Point, heading: f64) -> Self {
        build_trajectory(at, heading, 0.0, 0.0, 0.0)
    }
}

/// A circular agent view.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct View {
    pub center: Point,
    pub diameter: f64,
}

impl View {
    pub fn new(center: Point, diameter: f64) -> Self {
        View { center, diameter }
    }

    pub fn radius(&self) -> f64 {
        0.5 * self.diameter
    }

    pub fn shifted(&self, by: Point) -> View {
        View::new(self.center + by, self.diameter)
    }
}

pub fn bezier_point(traj: &Trajectory, t: f64) -> Result<Point, GeometryError> {
    if !(0.0..=1.0).contains(&t) {
        return Err(GeometryError::ParameterOutOfRange(t));
    }
    Ok(traj.eval(t))
}

/// Control points: `p1` lies `r1` along the incoming heading, `p2` lies `r2`
/// from `p1` along the turned heading `theta_prev + delta_theta`.
pub fn build_trajectory(start: Point, theta_prev: f64, r1: f64, r2: f64, delta_theta: f64) -> Trajectory {
    let p1 = start + Point::polar(r1, theta_prev);
    let p2 = p1 + Point::polar(r2, theta_prev + delta_theta);
    Trajectory {
        p0: start,
        p1,
        p2,
        params: MoveParams { r1, r2, theta_prev, delta_theta },
    }
}

/// Exact arc length of the quadratic Bézier.
///
/// With `B'(t) = 2(A + Bt)` the speed is `2·sqrt(a t² + b t + c)`; completing
/// the square gives an `asinh` antiderivative. When the parametrisation is
/// nearly linear the two antiderivative values are huge and cancel, so that
/// regime falls back to Gauss-Legendre split at the speed minimum.
pub fn trajectory_length(traj: &Trajectory) -> f64 {
    let a_vec = traj.p1 - traj.p0;
    let b_vec = traj.p2 - traj.p1 * 2.0 + traj.p0;
    let a = b_vec.dot(b_vec);
    let b = 2.0 * a_vec.dot(b_vec);
    let c = a_vec.dot(a_vec);
    if a == 0.0 {
        // Uniform-speed straight segment (or a point).
        return 2.0 * c.sqrt();
    }
    let shift = b / (2.0 * a);
    // m = (4ac - b²) / 4a², clamped since it is a squared distance ratio.
    let m = ((c - b * shift / 2.0) / a).max(0.0);
    let anti = |u: f64| {
        let r = (u * u + m).sqrt();
        if m > 0.0 {
            u * r + m * libm::asinh(u / m.sqrt())
        } else {
            u * u.abs()
        }
    };
    let hi = anti(1.0 + shift);
    let lo = anti(shift);
    let len = a.sqrt() * (hi - lo);
    let scale = hi.abs() + lo.abs();
    if len > 0.0 && scale <= 1e6 * (hi - lo).abs() {
        return len;
    }
    let speed = |t: f64| 2.0 * (a_vec + b_vec * t).norm();
    let split = (-shift).clamp(0.0, 1.0);
    gauss_legendre(&speed, 0.0, split) + gauss_legendre(&speed, split, 1.0)
}

fn gauss_legendre(f: &dyn Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    // 10-point rule.
    const NODES: [(f64, f64); 5] = [
        (0.148_874_338_981_631_2, 0.295_524_224_714_752_9),
        (0.433_395_394_129_247_2, 0.269_266_719_309_996_4),
        (0.679_409_568_299_024_4, 0.219_086_362_515_982),
        (0.865_063_366_688_984_5, 0.149_451_349_150_580_6),
        (0.973_906_528_517_171_7, 0.066_671_344_308_688_1),
    ];
    if hi <= lo {
        return 0.0;
    }
    let h = 0.5 * (hi - lo);
    let mid = 0.5 * (hi + lo);
    NODES.iter().map(|&(x, w)| w * (f(mid + h * x) + f(mid - h * x))).sum::<f64>() * h
}

/// Smallest distance between the two entities when both sit at the same
/// curve parameter, over `samples` evenly spaced parameters including both
/// endpoints.
pub fn min_separation(a: &Trajectory, b: &Trajectory, samples: usize) -> Result<f64, GeometryError> {
    if samples < 2 {
        return Err(GeometryError::TooFewSamples(samples));
    }
    let last = (samples - 1) as f64;
    Ok((0..samples)
        .map(|i| {
            let t = i as f64 / last;
            a.eval(t).distance(b.eval(t))
        })
        .fold(f64::INFINITY, f64::min))
}

/// Closed-disc containment of the entity center.
pub fn is_visible(pos: Point, view: &View) -> bool {
    pos.distance(view.center) <= view.radius()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameKind {
    Shift,
    Movement,
}

/// One canonical animation frame of a turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub kind: FrameKind,
    /// 1-based index within its kind.
    pub step: usize,
    /// Portion of the view shift applied so far.
    pub view_offset: Point,
    pub positions: BTreeMap<EntityId, Point>,
}

/// Canonical frames of one turn: for turns after the first, five frames that
/// slide the view along `view_shift` with entities parked at their start
/// positions, then ten movement frames at `t = i/10`.
pub fn sample_turn_frames(
    turn_index: usize,
    moves: &BTreeMap<EntityId, Trajectory>,
    view_shift: Option<Point>,
) -> Result<Vec<Frame>, GeometryError> {
    let shift = match (turn_index, view_shift) {
        (0, _) => return Err(GeometryError::ZeroTurn),
        (1, Some(_)) => return Err(GeometryError::ShiftOnFirstTurn),
        (1, None) => None,
        (k, None) => return Err(GeometryError::MissingShift(k)),
        (_, Some(s)) => Some(s),
    };
    let mut frames = Vec::with_capacity(SHIFT_FRAMES + MOVEMENT_FRAMES);
    let full = shift.unwrap_or(Point::ORIGIN);
    if let Some(shift) = shift {
        let parked: BTreeMap<_, _> = moves.iter().map(|(&id, t)| (id, t.p0)).collect();
        for step in 1..=SHIFT_FRAMES {
            let offset = if step == SHIFT_FRAMES { shift } else { shift * (step as f64 / SHIFT_FRAMES as f64) };
            frames.push(Frame { kind: FrameKind::Shift, step, view_offset: offset, positions: parked.clone() });
        }
    }
    for step in 1..=MOVEMENT_FRAMES {
        let t = step as f64 / MOVEMENT_FRAMES as f64;
        let positions = moves.iter().map(|(&id, traj)| (id, traj.eval(t))).collect();
        frames.push(Frame { kind: FrameKind::Movement, step, view_offset: full, positions });
    }
    Ok(frames)
}

/// Wraps an angle into `[0, 2π)`.
pub fn normalize_angle(theta: f64) -> f64 {
    let tau = 2.0 * PI;
    let r = theta.rem_euclid(tau);
    if r >= tau {
        0.0
    } else {
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn traj(p0: (f64, f64), p1: (f64, f64), p2: (f64, f64)) -> Trajectory {
        Trajectory {
            p0: Point::new(p0.0, p0.1),
            p1: Point::new(p1.0, p1.1),
            p2: Point::new(p2.0, p2.1),
            params: MoveParams { r1: 0.0, r2: 0.0, theta_prev: 0.0, delta_theta: 0.0 },
        }
    }

    #[test]
    fn bezier_examples() {
        let t = traj((0.0, 0.0), (1.0, 0.0), (1.0, 1.0));
        assert_eq!(bezier_point(&t, 0.0).unwrap(), Point::new(0.0, 0.0));
        assert_eq!(bezier_point(&t, 1.0).unwrap(), Point::new(1.0, 1.0));
        // 0.25·p0 + 0.5·p1 + 0.25·p2
        assert_eq!(bezier_point(&t, 0.5).unwrap(), Point::new(0.75, 0.25));
        assert_eq!(bezier_point(&t, 1.5), Err(GeometryError::ParameterOutOfRange(1.5)));
        assert!(bezier_point(&t, -1e-12).is_err());
    }

    #[test]
    fn build_examples() {
        let t = build_trajectory(Point::ORIGIN, 0.0, 0.2, 0.1, FRAC_PI_2);
        assert_eq!(t.p1, Point::new(0.2, 0.0));
        assert!((t.p2.x - 0.2).abs() < 1e-15 && (t.p2.y - 0.1).abs() < 1e-15);
        assert_eq!(t.params.heading_out(), FRAC_PI_2);

        let still = build_trajectory(Point::new(0.3, -0.2), 1.0, 0.0, 0.0, 0.4);
        assert_eq!(still.p0, still.p1);
        assert_eq!(still.p1, still.p2);
    }

    #[test]
    fn zero_turn_is_collinear() {
        let t = build_trajectory(Point::new(0.1, 0.2), 0.7, 0.15, 0.2, 0.0);
        let u = t.p1 - t.p0;
        let v = t.p2 - t.p0;
        assert!((u.x * v.y - u.y * v.x).abs() < 1e-15);
    }

    #[test]
    fn length_examples() {
        assert_eq!(trajectory_length(&traj((0.4, 0.4), (0.4, 0.4), (0.4, 0.4))), 0.0);
        let straight = trajectory_length(&traj((0.0, 0.0), (0.5, 0.0), (1.0, 0.0)));
        assert!((straight - 1.0).abs() < 1e-15);
        // Uneven straight parametrisation exercises the quadrature fallback.
        let uneven = trajectory_length(&traj((0.0, 0.0), (0.9, 0.0), (1.0, 0.0)));
        assert!((uneven - 1.0).abs() < 1e-12, "{uneven}");
        // Folding back on itself: speed touches zero inside the interval.
        let folded = trajectory_length(&traj((0.0, 0.0), (1.0, 0.0), (0.0, 0.0)));
        assert!((folded - 1.0).abs() < 1e-12, "{folded}");
    }

    #[test]
    fn separation_examples() {
        let a = traj((0.0, 0.0), (0.3, 0.1), (0.5, 0.5));
        assert_eq!(min_separation(&a, &a, 64).unwrap(), 0.0);
        let p = traj((0.0, 0.0), (0.0, 0.0), (0.0, 0.0));
        let q = traj((1.0, 0.0), (1.0, 0.0), (1.0, 0.0));
        assert_eq!(min_separation(&p, &q, 2).unwrap(), 1.0);
        // Straight segments crossing at the midpoint, t = 0.5 on a 3-point grid.
        let h = traj((-1.0, 0.0), (0.0, 0.0), (1.0, 0.0));
        let v = traj((0.0, -1.0), (0.0, 0.0), (0.0, 1.0));
        assert_eq!(min_separation(&h, &v, 3).unwrap(), 0.0);
        assert!(min_separation(&h, &v, 2).unwrap() > 1.0);
        assert_eq!(min_separation(&h, &v, 1), Err(GeometryError::TooFewSamples(1)));
    }

    #[test]
    fn visibility_boundary() {
        let view = View::new(Point::new(0.2, 0.3), 1.0);
        assert!(is_visible(view.center, &view));
        assert!(is_visible(Point::new(0.7, 0.3), &view));
        assert!(!is_visible(Point::new(0.7 + 1e-9, 0.3), &view));
    }

    #[test]
    fn frame_counts_and_order() {
        let mut moves = BTreeMap::new();
        moves.insert(EntityId(0), build_trajectory(Point::ORIGIN, 0.3, 0.1, 0.2, 0.5));
        moves.insert(EntityId(1), build_trajectory(Point::new(0.4, 0.0), 2.0, 0.2, 0.1, -0.5));
        let first = sample_turn_frames(1, &moves, None).unwrap();
        assert_eq!(first.len(), 10);
        assert!(first.iter().all(|f| f.kind == FrameKind::Movement));
        let third = sample_turn_frames(3, &moves, Some(Point::new(0.3, 0.0))).unwrap();
        assert_eq!(third.len(), 15);
        assert!(third[..5].iter().all(|f| f.kind == FrameKind::Shift));
        assert_eq!(third[4].view_offset, Point::new(0.3, 0.0));
        assert_eq!(third[0].positions[&EntityId(1)], Point::new(0.4, 0.0));
        for (id, t) in &moves {
            assert_eq!(third.last().unwrap().positions[id], t.p2);
        }
        assert_eq!(sample_turn_frames(1, &moves, Some(Point::ORIGIN)), Err(GeometryError::ShiftOnFirstTurn));
        assert_eq!(sample_turn_frames(2, &moves, None), Err(GeometryError::MissingShift(2)));
    }

    #[test]
    fn stationary_frames_identical() {
        let mut moves = BTreeMap::new();
        moves.insert(EntityId(3), Trajectory::stationary(Point::new(0.1, 0.1), 0.0));
        let frames = sample_turn_frames(2, &moves, Some(Point::ORIGIN)).unwrap();
        assert!(frames.windows(2).all(|w| w[0].positions == w[1].positions && w[0].view_offset == w[1].view_offset));
    }

    #[test]
    fn angle_normalization() {
        assert_eq!(normalize_angle(0.0), 0.0);
        assert!((normalize_angle(-FRAC_PI_2) - 3.0 * FRAC_PI_2).abs() < 1e-15);
        assert!(normalize_angle(-1e-300) < 2.0 * PI);
    }
}
