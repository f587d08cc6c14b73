//! Domains, boundary segments and projections onto those segments.

use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;
use std::ops::Deref;

/// Largest supported domain dimension (space plus time).
pub const MAX_DIM: usize = 4;
/// Tolerance applied to every defining inequality of a domain or segment.
pub const MEMBERSHIP_TOL: f64 = 1e-12;
/// Floor applied to `sqrt(1 - x2^2)` wherever the disk projection is differentiated.
pub const POLE_EPS: f64 = 1e-8;

const DOG_BONE_HALF_HEIGHT: f64 = 10.0;

/// A location in a domain. Coordinates are always finite.
#[derive(Clone, Debug, PartialEq)]
pub struct Point(SmallVec<[f64; MAX_DIM]>);

impl Point {
    pub fn new(coords: &[f64]) -> Result<Point> {
        if coords.len() > MAX_DIM {
            return Err(Error::Precondition(format!(
                "points have at most {MAX_DIM} coordinates, got {}",
                coords.len()
            )));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::Precondition(format!("non-finite coordinate in {coords:?}")));
        }
        Ok(Point(SmallVec::from_slice(coords)))
    }

    /// Builds a point without validation; callers guarantee finiteness.
    pub(crate) fn raw(coords: &[f64]) -> Point {
        Point(SmallVec::from_slice(coords))
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// Copy of the point with one coordinate replaced.
    pub fn with(&self, axis: usize, value: f64) -> Point {
        let mut p = self.clone();
        p.0[axis] = value;
        p
    }

    pub(crate) fn set(&mut self, axis: usize, value: f64) {
        self.0[axis] = value;
    }
}

impl Deref for Point {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl<const N: usize> From<[f64; N]> for Point {
    fn from(c: [f64; N]) -> Point {
        Point::new(&c).expect("invalid point literal")
    }
}

impl From<f64> for Point {
    fn from(c: f64) -> Point {
        Point::new(&[c]).expect("invalid point literal")
    }
}

/// Parameters of the tensile-specimen outline, symmetric about `x1 = 0` with `x2` in `[-10, 10]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DogBone {
    #[serde(default = "default_grip")]
    pub grip_half_width: f64,
    #[serde(default = "default_gauge")]
    pub gauge_half_width: f64,
    /// The gauge section covers `|x2| <= gauge_half_length`.
    #[serde(default = "default_gauge_len")]
    pub gauge_half_length: f64,
    /// The grips cover `|x2| >= grip_start`; the outline tapers linearly in between.
    #[serde(default = "default_grip_start")]
    pub grip_start: f64,
}

fn default_grip() -> f64 {
    4.0
}
fn default_gauge() -> f64 {
    2.0
}
fn default_gauge_len() -> f64 {
    5.0
}
fn default_grip_start() -> f64 {
    7.0
}

impl Default for DogBone {
    fn default() -> Self {
        DogBone {
            grip_half_width: default_grip(),
            gauge_half_width: default_gauge(),
            gauge_half_length: default_gauge_len(),
            grip_start: default_grip_start(),
        }
    }
}

impl DogBone {
    /// Half-width of the specimen at height `x2`.
    pub fn half_width(&self, x2: f64) -> f64 {
        let a = x2.abs();
        if a <= self.gauge_half_length {
            self.gauge_half_width
        } else if a >= self.grip_start {
            self.grip_half_width
        } else {
            let s = (a - self.gauge_half_length) / (self.grip_start - self.gauge_half_length);
            self.gauge_half_width + s * (self.grip_half_width - self.gauge_half_width)
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = self.gauge_half_width > 0.0
            && self.grip_half_width > self.gauge_half_width
            && self.gauge_half_length > 0.0
            && self.grip_start > self.gauge_half_length
            && self.grip_start < DOG_BONE_HALF_HEIGHT
            && [self.grip_half_width, self.gauge_half_width, self.gauge_half_length, self.grip_start]
                .iter()
                .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidDomain(format!(
                "dog bone needs grip > gauge > 0 and 0 < gauge length < grip start < 10, got {self:?}"
            )))
        }
    }
}

/// A closed domain.
#[derive(Clone, Debug, PartialEq)]
pub enum Domain {
    Interval {
        a: f64,
        b: f64,
    },
    Box {
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
    UnitDisk,
    UnitTriangle,
    DogBone(DogBone),
    /// `[t0, t1] × space`, with time as the first coordinate.
    SpaceTime {
        t0: f64,
        t1: f64,
        space: std::boxed::Box<Domain>,
    },
}

/// Point-set layouts for [`sample_interior`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Grid,
    LowDiscrepancy,
}

impl Domain {
    pub fn interval(a: f64, b: f64) -> Result<Domain> {
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(Error::InvalidDomain(format!("interval needs a < b, got [{a}, {b}]")));
        }
        Ok(Domain::Interval { a, b })
    }

    pub fn cube(lo: &[f64], hi: &[f64]) -> Result<Domain> {
        if lo.len() != hi.len() || lo.is_empty() || lo.len() > MAX_DIM {
            return Err(Error::InvalidDomain(format!("box bounds must have equal length between 1 and {MAX_DIM}")));
        }
        if lo.iter().zip(hi).any(|(l, h)| !(l.is_finite() && h.is_finite() && l < h)) {
            return Err(Error::InvalidDomain(format!("box needs lo < hi, got {lo:?} / {hi:?}")));
        }
        Ok(Domain::Box { lo: lo.to_vec(), hi: hi.to_vec() })
    }

    pub fn unit_square() -> Domain {
        Domain::Box { lo: vec![0.0, 0.0], hi: vec![1.0, 1.0] }
    }

    pub fn dog_bone(params: DogBone) -> Result<Domain> {
        params.validate()?;
        Ok(Domain::DogBone(params))
    }

    pub fn space_time(t0: f64, t1: f64, space: Domain) -> Result<Domain> {
        if !(t0.is_finite() && t1.is_finite() && t0 < t1) {
            return Err(Error::InvalidDomain(format!("time range needs t0 < t1, got [{t0}, {t1}]")));
        }
        if matches!(space, Domain::SpaceTime { .. }) || space.dim() + 1 > MAX_DIM {
            return Err(Error::InvalidDomain("space-time domains cannot be nested".into()));
        }
        Ok(Domain::SpaceTime { t0, t1, space: std::boxed::Box::new(space) })
    }

    pub fn dim(&self) -> usize {
        match self {
            Domain::Interval { .. } => 1,
            Domain::Box { lo, .. } => lo.len(),
            Domain::UnitDisk | Domain::UnitTriangle | Domain::DogBone(_) => 2,
            Domain::SpaceTime { space, .. } => 1 + space.dim(),
        }
    }

    pub fn is_convex(&self) -> bool {
        match self {
            Domain::DogBone(_) => false,
            Domain::SpaceTime { space, .. } => space.is_convex(),
            _ => true,
        }
    }

    pub fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        Ok(())
    }

    /// Closed-set membership with tolerance [`MEMBERSHIP_TOL`].
    pub fn contains(&self, x: &[f64]) -> Result<bool> {
        self.check_dim(x)?;
        Ok(self.contains_unchecked(x))
    }

    pub(crate) fn contains_unchecked(&self, x: &[f64]) -> bool {
        let tol = MEMBERSHIP_TOL;
        match self {
            Domain::Interval { a, b } => x[0] >= a - tol && x[0] <= b + tol,
            Domain::Box { lo, hi } => x.iter().zip(lo.iter().zip(hi)).all(|(v, (l, h))| *v >= l - tol && *v <= h + tol),
            Domain::UnitDisk => x[0] * x[0] + x[1] * x[1] <= 1.0 + tol,
            Domain::UnitTriangle => x[0] >= -tol && x[1] >= -tol && x[0] + x[1] <= 1.0 + tol,
            Domain::DogBone(p) => x[1].abs() <= DOG_BONE_HALF_HEIGHT + tol && x[0].abs() <= p.half_width(x[1]) + tol,
            Domain::SpaceTime { t0, t1, space } => {
                x[0] >= t0 - tol && x[0] <= t1 + tol && space.contains_unchecked(&x[1..])
            }
        }
    }

    /// Axis-aligned bounding box.
    pub fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            Domain::Interval { a, b } => (vec![*a], vec![*b]),
            Domain::Box { lo, hi } => (lo.clone(), hi.clone()),
            Domain::UnitDisk => (vec![-1.0, -1.0], vec![1.0, 1.0]),
            Domain::UnitTriangle => (vec![0.0, 0.0], vec![1.0, 1.0]),
            Domain::DogBone(p) => {
                (vec![-p.grip_half_width, -DOG_BONE_HALF_HEIGHT], vec![p.grip_half_width, DOG_BONE_HALF_HEIGHT])
            }
            Domain::SpaceTime { t0, t1, space } => {
                let (mut lo, mut hi) = space.bounds();
                lo.insert(0, *t0);
                hi.insert(0, *t1);
                (lo, hi)
            }
        }
    }

    /// Continuous map from `[0,1]^d` onto the domain.
    pub fn param_interior(&self, u: &[f64]) -> Point {
        match self {
            Domain::Interval { .. } | Domain::Box { .. } => {
                let (lo, hi) = self.bounds();
                let c: Vec<f64> = (0..lo.len()).map(|i| lerp(lo[i], hi[i], u[i])).collect();
                Point::raw(&c)
            }
            Domain::UnitDisk => {
                let (s, c) = (2.0 * std::f64::consts::PI * u[1]).sin_cos();
                Point::raw(&[u[0] * c, u[0] * s])
            }
            Domain::UnitTriangle => Point::raw(&[u[0] * (1.0 - u[1]), u[1]]),
            Domain::DogBone(p) => {
                let x2 = lerp(-DOG_BONE_HALF_HEIGHT, DOG_BONE_HALF_HEIGHT, u[1]);
                Point::raw(&[(2.0 * u[0] - 1.0) * p.half_width(x2), x2])
            }
            Domain::SpaceTime { t0, t1, space } => {
                let mut c = vec![lerp(*t0, *t1, u[0])];
                c.extend_from_slice(&space.param_interior(&u[1..]));
                Point::raw(&c)
            }
        }
    }

    /// Boundary segments in id order.
    ///
    /// Ids: interval `0 = a, 1 = b`; box `2*axis + side` (side 0 is the lower face);
    /// disk `0` full circle, `1` half with `x1 <= 0`, `2` half with `x1 >= 0`;
    /// triangle `0` leg `x1 = 0`, `1` leg `x2 = 0`, `2` hypotenuse;
    /// dog bone `0` bottom end `x2 = -10`, `1` top end `x2 = 10`;
    /// space-time `0` face `t = t0`, `1` face `t = t1`, then `2 + k` the lifted spatial segment `k`.
    pub fn segments(&self) -> Vec<BoundarySegment> {
        self.segment_kinds()
            .into_iter()
            .enumerate()
            .map(|(id, kind)| BoundarySegment { id, kind, domain: self.clone() })
            .collect()
    }

    pub fn segment(&self, id: usize) -> Result<BoundarySegment> {
        let kinds = self.segment_kinds();
        kinds
            .get(id)
            .map(|&kind| BoundarySegment { id, kind, domain: self.clone() })
            .ok_or_else(|| Error::InvalidDomain(format!("segment id {id} out of range (domain has {})", kinds.len())))
    }

    fn segment_kinds(&self) -> Vec<SegmentKind> {
        match self {
            Domain::Interval { a, b } => {
                vec![SegmentKind::Face { axis: 0, value: *a }, SegmentKind::Face { axis: 0, value: *b }]
            }
            Domain::Box { lo, hi } => (0..lo.len())
                .flat_map(|axis| {
                    [SegmentKind::Face { axis, value: lo[axis] }, SegmentKind::Face { axis, value: hi[axis] }]
                })
                .collect(),
            Domain::UnitDisk => vec![
                SegmentKind::Circle { offset: 0 },
                SegmentKind::HalfCircle { offset: 0, side: Side::Lower },
                SegmentKind::HalfCircle { offset: 0, side: Side::Upper },
            ],
            Domain::UnitTriangle => vec![
                SegmentKind::Face { axis: 0, value: 0.0 },
                SegmentKind::Face { axis: 1, value: 0.0 },
                SegmentKind::Hypotenuse { offset: 0 },
            ],
            Domain::DogBone(_) => vec![
                SegmentKind::Face { axis: 1, value: -DOG_BONE_HALF_HEIGHT },
                SegmentKind::Face { axis: 1, value: DOG_BONE_HALF_HEIGHT },
            ],
            Domain::SpaceTime { t0, t1, space } => {
                let mut kinds =
                    vec![SegmentKind::Face { axis: 0, value: *t0 }, SegmentKind::Face { axis: 0, value: *t1 }];
                kinds.extend(space.segment_kinds().into_iter().map(|k| k.shifted()));
                kinds
            }
        }
    }

    fn segment_param(&self, kind: SegmentKind, u: &[f64]) -> Point {
        match (self, kind) {
            (Domain::SpaceTime { t0, t1, space }, kind) => {
                if let SegmentKind::Face { axis: 0, value } = kind {
                    let mut c = vec![value];
                    c.extend_from_slice(&space.param_interior(u));
                    Point::raw(&c)
                } else {
                    let mut c = vec![lerp(*t0, *t1, u[0])];
                    c.extend_from_slice(&space.segment_param(kind.unshifted(), &u[1..]));
                    Point::raw(&c)
                }
            }
            (Domain::Interval { .. } | Domain::Box { .. }, SegmentKind::Face { axis, value }) => {
                let (lo, hi) = self.bounds();
                let mut k = 0;
                let c: Vec<f64> = (0..lo.len())
                    .map(|i| {
                        if i == axis {
                            value
                        } else {
                            k += 1;
                            lerp(lo[i], hi[i], u[k - 1])
                        }
                    })
                    .collect();
                Point::raw(&c)
            }
            (Domain::UnitTriangle, SegmentKind::Face { axis: 0, .. }) => Point::raw(&[0.0, u[0]]),
            (Domain::UnitTriangle, SegmentKind::Face { .. }) => Point::raw(&[u[0], 0.0]),
            (Domain::DogBone(p), SegmentKind::Face { value, .. }) => {
                Point::raw(&[(2.0 * u[0] - 1.0) * p.grip_half_width, value])
            }
            (_, SegmentKind::Circle { .. }) => {
                let (s, c) = (2.0 * std::f64::consts::PI * u[0]).sin_cos();
                Point::raw(&[c, s])
            }
            (_, SegmentKind::HalfCircle { side, .. }) => {
                let x2 = 1.0 - 2.0 * u[0];
                let r = (1.0 - x2 * x2).max(0.0).sqrt();
                Point::raw(&[side.sign() * r, x2])
            }
            (_, SegmentKind::Hypotenuse { .. }) => Point::raw(&[1.0 - u[0], u[0]]),
            (d, k) => unreachable!("segment {k:?} does not belong to {d:?}"),
        }
    }
}

fn lerp(a: f64, b: f64, s: f64) -> f64 {
    a + s * (b - a)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    /// The half with the smaller coordinate (left half of the disk).
    Lower,
    Upper,
}

impl Side {
    fn sign(self) -> f64 {
        match self {
            Side::Lower => -1.0,
            Side::Upper => 1.0,
        }
    }
}

/// Shape of a boundary segment. `offset` is the index of the first spatial coordinate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SegmentKind {
    /// The part of the boundary where `x[axis] == value`.
    Face {
        axis: usize,
        value: f64,
    },
    Circle {
        offset: usize,
    },
    HalfCircle {
        offset: usize,
        side: Side,
    },
    Hypotenuse {
        offset: usize,
    },
}

impl SegmentKind {
    fn shifted(self) -> SegmentKind {
        match self {
            SegmentKind::Face { axis, value } => SegmentKind::Face { axis: axis + 1, value },
            SegmentKind::Circle { offset } => SegmentKind::Circle { offset: offset + 1 },
            SegmentKind::HalfCircle { offset, side } => SegmentKind::HalfCircle { offset: offset + 1, side },
            SegmentKind::Hypotenuse { offset } => SegmentKind::Hypotenuse { offset: offset + 1 },
        }
    }

    fn unshifted(self) -> SegmentKind {
        match self {
            SegmentKind::Face { axis, value } => SegmentKind::Face { axis: axis - 1, value },
            SegmentKind::Circle { offset } => SegmentKind::Circle { offset: offset - 1 },
            SegmentKind::HalfCircle { offset, side } => SegmentKind::HalfCircle { offset: offset - 1, side },
            SegmentKind::Hypotenuse { offset } => SegmentKind::Hypotenuse { offset: offset - 1 },
        }
    }
}

/// A piece of the domain boundary on which a constraint can act.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundarySegment {
    id: usize,
    kind: SegmentKind,
    domain: Domain,
}

impl BoundarySegment {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn kind(&self) -> SegmentKind {
        self.kind
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    /// Number of parameters of the segment parametrization.
    pub fn param_dim(&self) -> usize {
        self.domain.dim() - 1
    }

    pub fn contains(&self, x: &[f64]) -> Result<bool> {
        self.domain.check_dim(x)?;
        Ok(self.contains_unchecked(x))
    }

    pub(crate) fn contains_unchecked(&self, x: &[f64]) -> bool {
        let tol = MEMBERSHIP_TOL;
        let on = match self.kind {
            SegmentKind::Face { axis, value } => (x[axis] - value).abs() <= tol,
            SegmentKind::Circle { offset: o } => (x[o] * x[o] + x[o + 1] * x[o + 1] - 1.0).abs() <= tol,
            SegmentKind::HalfCircle { offset: o, side } => {
                (x[o] * x[o] + x[o + 1] * x[o + 1] - 1.0).abs() <= tol && side.sign() * x[o] >= -tol
            }
            SegmentKind::Hypotenuse { offset: o } => (x[o] + x[o + 1] - 1.0).abs() <= tol,
        };
        on && self.domain.contains_unchecked(x)
    }

    /// Map from `[0,1]^(d-1)` onto the segment.
    pub fn param(&self, u: &[f64]) -> Result<Point> {
        if u.len() != self.param_dim() {
            return Err(Error::DimensionMismatch { expected: self.param_dim(), got: u.len() });
        }
        Ok(self.domain.segment_param(self.kind, u))
    }

    /// Value of coordinate `axis` that puts `x` on the segment, together with its
    /// gradient and Hessian with respect to `x`. `None` if the segment is not a graph along `axis`.
    fn coordinate_along(&self, axis: usize, x: &[f64]) -> Option<CoordJet> {
        let mut jet = CoordJet::default();
        match self.kind {
            SegmentKind::Face { axis: a, value } if a == axis => {
                jet.value = value;
            }
            SegmentKind::HalfCircle { offset: o, side } if o == axis => {
                let x2 = x[o + 1];
                let s = (1.0 - x2 * x2).max(0.0).sqrt();
                let sc = s.max(POLE_EPS);
                let sg = side.sign();
                jet.value = sg * s;
                jet.grad[o + 1] = -sg * x2 / sc;
                jet.hess[o + 1][o + 1] = -sg / (sc * sc * sc);
            }
            SegmentKind::Hypotenuse { offset: o } if axis == o || axis == o + 1 => {
                let other = if axis == o { o + 1 } else { o };
                jet.value = 1.0 - x[other];
                jet.grad[other] = -1.0;
            }
            _ => return None,
        }
        Some(jet)
    }
}

#[derive(Clone, Debug, Default)]
struct CoordJet {
    value: f64,
    grad: [f64; MAX_DIM],
    hess: [[f64; MAX_DIM]; MAX_DIM],
}

/// First and second derivatives of a projection at a point.
///
/// Only coordinate `axis` of the image moves with `x` beyond the identity, so the Jacobian is the
/// identity with row `axis` replaced by `grad`, and `hess` is the Hessian of that coordinate.
#[derive(Clone, Debug)]
pub struct ProjectionJet {
    pub value: Point,
    pub axis: usize,
    pub grad: [f64; MAX_DIM],
    pub hess: [[f64; MAX_DIM]; MAX_DIM],
}

impl ProjectionJet {
    /// Entry `(c, a)` of the Jacobian: derivative of image coordinate `c` along input axis `a`.
    pub fn jac(&self, c: usize, a: usize) -> f64 {
        if c == self.axis {
            self.grad[a]
        } else if c == a {
            1.0
        } else {
            0.0
        }
    }
}

/// Map from the domain onto a segment moving along one signed coordinate direction.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    target: BoundarySegment,
    axis: usize,
    sign: f64,
}

impl Projection {
    /// Projection onto `target` along the signed unit vector `direction`.
    pub fn along(target: BoundarySegment, direction: &[f64]) -> Result<Projection> {
        let d = target.domain.dim();
        if direction.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: direction.len() });
        }
        let nonzero: Vec<usize> = (0..d).filter(|&i| direction[i] != 0.0).collect();
        if nonzero.len() != 1 || direction[nonzero[0]].abs() != 1.0 {
            return Err(Error::InvalidProjection(format!(
                "direction must be a signed coordinate axis, got {direction:?}"
            )));
        }
        let axis = nonzero[0];
        let p = Projection { target, axis, sign: direction[axis] };
        let probe = vec![0.0; d];
        if p.target.coordinate_along(axis, &probe).is_none() {
            return Err(Error::InvalidProjection(format!(
                "segment {} cannot be reached along axis {axis}",
                p.target.id
            )));
        }
        // Every interior point must move towards the segment and land on it.
        for x in sample_interior(&p.target.domain, 64, Scheme::LowDiscrepancy, 0)? {
            let jet = p.target.coordinate_along(axis, &x).unwrap();
            let y = p.apply(&x);
            if (jet.value - x[axis]) * p.sign < -MEMBERSHIP_TOL || !p.target.contains_unchecked(&y) {
                return Err(Error::InvalidProjection(format!(
                    "moving {x:?} along {direction:?} does not reach segment {}",
                    p.target.id
                )));
            }
        }
        Ok(p)
    }

    pub fn target(&self) -> &BoundarySegment {
        &self.target
    }

    pub fn axis(&self) -> usize {
        self.axis
    }

    pub fn direction(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.target.domain.dim()];
        v[self.axis] = self.sign;
        v
    }

    /// Projects a point of the domain; points already on the segment are returned unchanged.
    pub fn project(&self, x: &[f64]) -> Result<Point> {
        let dom = &self.target.domain;
        dom.check_dim(x)?;
        if !dom.contains_unchecked(x) {
            return Err(Error::OutsideDomain(x.to_vec()));
        }
        if self.target.contains_unchecked(x) {
            return Ok(Point::raw(x));
        }
        Ok(self.apply(x))
    }

    /// The closed-form map without membership checks.
    pub(crate) fn apply(&self, x: &[f64]) -> Point {
        let jet = self.target.coordinate_along(self.axis, x).expect("validated at construction");
        let mut p = Point::raw(x);
        p.set(self.axis, jet.value);
        p
    }

    pub(crate) fn jet(&self, x: &[f64]) -> ProjectionJet {
        let c = self.target.coordinate_along(self.axis, x).expect("validated at construction");
        let mut p = Point::raw(x);
        p.set(self.axis, c.value);
        ProjectionJet { value: p, axis: self.axis, grad: c.grad, hess: c.hess }
    }
}

/// `n` points on a segment: the first parameter runs over a uniform grid including both ends,
/// remaining parameters (space-time faces) are drawn uniformly from `seed`.
pub fn sample_boundary(seg: &BoundarySegment, n: usize, seed: u64) -> Vec<Point> {
    let pd = seg.param_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let mut u = Vec::with_capacity(pd);
            if pd > 0 {
                u.push(if n == 1 { 0.5 } else { i as f64 / (n - 1) as f64 });
                for _ in 1..pd {
                    u.push(rng.random::<f64>());
                }
            }
            seg.domain.segment_param(seg.kind, &u)
        })
        .collect()
}

/// `n` points inside the domain.
///
/// `Grid` uses the coarsest tensor grid over the bounding box with at least `n` points inside the
/// domain and keeps `n` of them evenly spread in lexicographic order. `LowDiscrepancy` uses a
/// randomly shifted Halton sequence with rejection.
pub fn sample_interior(domain: &Domain, n: usize, scheme: Scheme, seed: u64) -> Result<Vec<Point>> {
    if n == 0 {
        return Err(Error::Precondition("sample_interior needs n >= 1".into()));
    }
    let d = domain.dim();
    let (lo, hi) = domain.bounds();
    match scheme {
        Scheme::Grid => {
            let mut m = ((n as f64).powf(1.0 / d as f64) + 1e-9).floor().max(1.0) as usize;
            loop {
                let pts =
                    tensor_grid(&lo, &hi, m).into_iter().filter(|p| domain.contains_unchecked(p)).collect::<Vec<_>>();
                if pts.len() >= n {
                    let len = pts.len();
                    return Ok((0..n).map(|k| pts[k * len / n].clone()).collect());
                }
                m += 1;
            }
        }
        Scheme::LowDiscrepancy => {
            const BASES: [u64; MAX_DIM] = [2, 3, 5, 7];
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let shift: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
            let mut out = Vec::with_capacity(n);
            let mut idx = 1u64;
            while out.len() < n {
                let c: Vec<f64> = (0..d)
                    .map(|j| {
                        let u = (radical_inverse(idx, BASES[j]) + shift[j]).fract();
                        lerp(lo[j], hi[j], u)
                    })
                    .collect();
                idx += 1;
                if domain.contains_unchecked(&c) {
                    out.push(Point::raw(&c));
                }
            }
            Ok(out)
        }
    }
}

fn tensor_grid(lo: &[f64], hi: &[f64], m: usize) -> Vec<Point> {
    let d = lo.len();
    let coord = |j: usize, i: usize| {
        if m == 1 {
            0.5 * (lo[j] + hi[j])
        } else {
            lerp(lo[j], hi[j], i as f64 / (m - 1) as f64)
        }
    };
    let total = m.pow(d as u32);
    (0..total)
        .map(|mut flat| {
            let mut c = vec![0.0; d];
            for j in (0..d).rev() {
                c[j] = coord(j, flat % m);
                flat /= m;
            }
            Point::raw(&c)
        })
        .collect()
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn square_left() -> Projection {
        let sq = Domain::unit_square();
        Projection::along(sq.segment(0).unwrap(), &[-1.0, 0.0]).unwrap()
    }

    fn all_projections() -> Vec<Projection> {
        let sq = Domain::unit_square();
        let tri = Domain::UnitTriangle;
        let bone = Domain::dog_bone(DogBone::default()).unwrap();
        let st = Domain::space_time(0.0, 0.25, Domain::interval(0.0, 1.0).unwrap()).unwrap();
        vec![
            square_left(),
            Projection::along(sq.segment(1).unwrap(), &[1.0, 0.0]).unwrap(),
            Projection::along(sq.segment(3).unwrap(), &[0.0, 1.0]).unwrap(),
            Projection::along(Domain::UnitDisk.segment(1).unwrap(), &[-1.0, 0.0]).unwrap(),
            Projection::along(Domain::UnitDisk.segment(2).unwrap(), &[1.0, 0.0]).unwrap(),
            Projection::along(tri.segment(0).unwrap(), &[-1.0, 0.0]).unwrap(),
            Projection::along(tri.segment(1).unwrap(), &[0.0, -1.0]).unwrap(),
            Projection::along(tri.segment(2).unwrap(), &[1.0, 0.0]).unwrap(),
            Projection::along(bone.segment(0).unwrap(), &[0.0, -1.0]).unwrap(),
            Projection::along(bone.segment(1).unwrap(), &[0.0, 1.0]).unwrap(),
            Projection::along(st.segment(0).unwrap(), &[-1.0, 0.0]).unwrap(),
            Projection::along(st.segment(3).unwrap(), &[0.0, 1.0]).unwrap(),
        ]
    }

    #[test]
    fn contains_examples() {
        assert!(Domain::UnitDisk.contains(&[0.0, 0.0]).unwrap());
        assert!(!Domain::UnitTriangle.contains(&[0.6, 0.6]).unwrap());
        assert!(Domain::interval(0.0, 1.0).unwrap().contains(&[1.0]).unwrap());
        assert!(matches!(Domain::UnitDisk.contains(&[0.0]), Err(Error::DimensionMismatch { expected: 2, got: 1 })));
    }

    #[test]
    fn dog_bone_outline() {
        let p = DogBone::default();
        assert_eq!(p.half_width(0.0), 2.0);
        assert_eq!(p.half_width(-8.0), 4.0);
        assert_eq!(p.half_width(6.0), 3.0);
        let d = Domain::dog_bone(p).unwrap();
        assert!(d.contains(&[3.9, 9.0]).unwrap());
        assert!(!d.contains(&[3.0, 0.0]).unwrap());
        assert!(!d.is_convex());
        assert!(Domain::dog_bone(DogBone { grip_half_width: 1.0, ..DogBone::default() }).is_err());
    }

    #[test]
    fn invalid_domains_rejected() {
        assert!(Domain::interval(1.0, 0.0).is_err());
        assert!(Domain::cube(&[0.0, 1.0], &[1.0, 1.0]).is_err());
        assert!(Point::new(&[f64::NAN]).is_err());
    }

    #[test]
    fn projection_examples() {
        assert_eq!(square_left().project(&[0.3, 0.7]).unwrap().coords(), &[0.0, 0.7]);
        let disk = Projection::along(Domain::UnitDisk.segment(1).unwrap(), &[-1.0, 0.0]).unwrap();
        let y = disk.project(&[0.2, 0.5]).unwrap();
        assert_eq!(y.coords(), &[-(0.75f64.sqrt()), 0.5]);
        let tri = Projection::along(Domain::UnitTriangle.segment(2).unwrap(), &[1.0, 0.0]).unwrap();
        let y = tri.project(&[0.1, 0.4]).unwrap();
        assert!((y[0] - 0.6).abs() < 1e-15 && y[1] == 0.4);
        assert!(matches!(square_left().project(&[1.5, 0.5]), Err(Error::OutsideDomain(_))));
    }

    #[test]
    fn projection_direction_validated() {
        let sq = Domain::unit_square();
        assert!(Projection::along(sq.segment(0).unwrap(), &[1.0, 0.0]).is_err());
        assert!(Projection::along(sq.segment(0).unwrap(), &[0.0, -1.0]).is_err());
        assert!(Projection::along(sq.segment(0).unwrap(), &[-0.5, 0.0]).is_err());
        assert!(Projection::along(Domain::UnitDisk.segment(0).unwrap(), &[-1.0, 0.0]).is_err());
    }

    #[test]
    fn sample_boundary_examples() {
        let left = Domain::unit_square().segment(0).unwrap();
        let pts: Vec<Vec<f64>> = sample_boundary(&left, 3, 0).iter().map(|p| p.to_vec()).collect();
        assert_eq!(pts, vec![vec![0.0, 0.0], vec![0.0, 0.5], vec![0.0, 1.0]]);
        let end = Domain::interval(0.0, 1.0).unwrap().segment(0).unwrap();
        assert_eq!(sample_boundary(&end, 1, 0)[0].coords(), &[0.0]);
        let circle = Domain::UnitDisk.segment(0).unwrap();
        for p in sample_boundary(&circle, 4, 7) {
            assert!((p[0] * p[0] + p[1] * p[1] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sampled_boundary_points_satisfy_membership() {
        let domains = vec![
            Domain::interval(-1.0, 2.0).unwrap(),
            Domain::unit_square(),
            Domain::UnitDisk,
            Domain::UnitTriangle,
            Domain::dog_bone(DogBone::default()).unwrap(),
            Domain::space_time(0.0, 1.0, Domain::dog_bone(DogBone::default()).unwrap()).unwrap(),
            Domain::space_time(0.0, 1.0, Domain::UnitDisk).unwrap(),
        ];
        for d in domains {
            for seg in d.segments() {
                for p in sample_boundary(&seg, 25, 3) {
                    assert!(seg.contains(&p).unwrap(), "{p:?} not on {seg:?}");
                }
            }
        }
    }

    #[test]
    fn sample_interior_examples() {
        let iv = Domain::interval(0.0, 1.0).unwrap();
        let pts: Vec<f64> = sample_interior(&iv, 5, Scheme::Grid, 0).unwrap().iter().map(|p| p[0]).collect();
        assert_eq!(pts, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        let sq = sample_interior(&Domain::unit_square(), 4, Scheme::Grid, 0).unwrap();
        let got: Vec<Vec<f64>> = sq.iter().map(|p| p.to_vec()).collect();
        assert_eq!(got, vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]]);
        let disk = sample_interior(&Domain::UnitDisk, 100, Scheme::LowDiscrepancy, 1).unwrap();
        assert_eq!(disk.len(), 100);
        assert!(disk.iter().all(|p| Domain::UnitDisk.contains(p).unwrap()));
        let tri = sample_interior(&Domain::UnitTriangle, 10, Scheme::Grid, 0).unwrap();
        assert_eq!(tri.len(), 10);
        assert!(tri.iter().all(|p| Domain::UnitTriangle.contains(p).unwrap()));
        assert_eq!(
            sample_interior(&Domain::UnitDisk, 7, Scheme::LowDiscrepancy, 5).unwrap(),
            sample_interior(&Domain::UnitDisk, 7, Scheme::LowDiscrepancy, 5).unwrap()
        );
    }

    #[test]
    fn projections_land_on_target_and_fix_it() {
        for p in all_projections() {
            let dom = p.target().domain().clone();
            for x in sample_interior(&dom, 200, Scheme::LowDiscrepancy, 11).unwrap() {
                let y = p.project(&x).unwrap();
                assert!(p.target().contains(&y).unwrap());
                let z = p.project(&y).unwrap();
                for i in 0..x.len() {
                    assert!((z[i] - y[i]).abs() <= 1e-14);
                }
            }
            for x in sample_boundary(p.target(), 200, 2) {
                let y = p.project(&x).unwrap();
                assert_eq!(y, x);
                let y = p.apply(&x);
                for i in 0..x.len() {
                    assert!((y[i] - x[i]).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn convexity_guard() {
        for p in all_projections() {
            let dom = p.target().domain().clone();
            if !dom.is_convex() {
                continue;
            }
            for x in sample_interior(&dom, 100, Scheme::LowDiscrepancy, 4).unwrap() {
                let y = p.project(&x).unwrap();
                for k in 0..=10 {
                    let s = k as f64 / 10.0;
                    let z: Vec<f64> = x.iter().zip(y.iter()).map(|(a, b)| a + s * (b - a)).collect();
                    assert!(dom.contains(&z).unwrap());
                }
            }
        }
    }

    #[test]
    fn projections_are_lipschitz_away_from_poles() {
        for p in all_projections() {
            let dom = p.target().domain().clone();
            let pts = sample_interior(&dom, 300, Scheme::LowDiscrepancy, 9).unwrap();
            let mut worst: f64 = 0.0;
            for x in &pts {
                if dom == Domain::UnitDisk && x[1].abs() > 0.95 {
                    continue;
                }
                let mut xp = x.to_vec();
                for v in xp.iter_mut() {
                    *v += 1e-7;
                }
                if !dom.contains(&xp).unwrap() {
                    continue;
                }
                let (y, yp) = (p.project(x).unwrap(), p.project(&xp).unwrap());
                let dy: f64 = y.iter().zip(yp.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                let dx = 1e-7 * (x.len() as f64).sqrt();
                worst = worst.max(dy / dx);
            }
            assert!(worst < 10.0, "Lipschitz ratio {worst} for {p:?}");
        }
    }

    #[test]
    fn projection_jet_matches_finite_differences() {
        let disk = Projection::along(Domain::UnitDisk.segment(2).unwrap(), &[1.0, 0.0]).unwrap();
        let x = [0.1, 0.6];
        let j = disk.jet(&x);
        let h = 1e-6;
        let f = |x2: f64| disk.apply(&[0.1, x2])[0];
        let g_fd = (f(0.6 + h) - f(0.6 - h)) / (2.0 * h);
        let h_fd = (f(0.6 + 1e-4) - 2.0 * f(0.6) + f(0.6 - 1e-4)) / 1e-8;
        assert!((j.grad[1] - g_fd).abs() < 1e-8);
        assert!((j.hess[1][1] - h_fd).abs() < 1e-5);
        assert_eq!(j.jac(1, 1), 1.0);
        assert_eq!(j.jac(0, 0), 0.0);
    }

    proptest! {
        #[test]
        fn square_projection_idempotent(x1 in 0.0f64..=1.0, x2 in 0.0f64..=1.0) {
            let p = square_left();
            let y = p.project(&[x1, x2]).unwrap();
            prop_assert_eq!(p.project(&y).unwrap(), y.clone());
            prop_assert_eq!(y.coords(), &[0.0, x2]);
        }

        #[test]
        fn triangle_hypotenuse_on_target(u in 0.0f64..=1.0, v in 0.0f64..=1.0) {
            let d = Domain::UnitTriangle;
            let x = d.param_interior(&[u, v]);
            prop_assert!(d.contains(&x).unwrap());
            let p = Projection::along(d.segment(2).unwrap(), &[1.0, 0.0]).unwrap();
            prop_assert!(p.target().contains(&p.project(&x).unwrap()).unwrap());
        }
    }
}
