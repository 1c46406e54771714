//! Planar primitives: points, poses, convex quadrangles and the free space
//! built from them, together with the distance queries the collision loss
//! differentiates through.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::autodiff::Real;

/// Upper bound on the number of quadrangles in one free space.
pub const MAX_QUADS: usize = 8;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("non-finite coordinate")]
    NonFinite,
    #[error("degenerate quadrangle (area {0})")]
    Degenerate(f64),
    #[error("quadrangle is not convex")]
    NonConvex,
    #[error("free space needs at least one quadrangle")]
    EmptyFreeSpace,
    #[error("free space has {0} quadrangles, at most {MAX_QUADS} allowed")]
    TooManyQuads(usize),
}

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl From<[f64; 2]> for Point2 {
    fn from([x, y]: [f64; 2]) -> Self {
        Self { x, y }
    }
}

impl From<Point2> for [f64; 2] {
    fn from(p: Point2) -> Self {
        [p.x, p.y]
    }
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn sub(self, o: Point2) -> Point2 {
        Point2::new(self.x - o.x, self.y - o.y)
    }

    pub fn add(self, o: Point2) -> Point2 {
        Point2::new(self.x + o.x, self.y + o.y)
    }

    pub fn scale(self, s: f64) -> Point2 {
        Point2::new(self.x * s, self.y * s)
    }

    pub fn dot(self, o: Point2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Point2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, o: Point2) -> f64 {
        self.sub(o).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// Position and heading; heading kept in (-pi, pi].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Pose2 {
    pub position: Point2,
    pub heading: f64,
}

impl From<[f64; 3]> for Pose2 {
    fn from([x, y, h]: [f64; 3]) -> Self {
        Pose2::new(x, y, h)
    }
}

impl From<Pose2> for [f64; 3] {
    fn from(p: Pose2) -> Self {
        [p.position.x, p.position.y, p.heading]
    }
}

impl Pose2 {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self { position: Point2::new(x, y), heading: wrap_angle(heading) }
    }

    pub fn x(&self) -> f64 {
        self.position.x
    }

    pub fn y(&self) -> f64 {
        self.position.y
    }

    /// Maps a point given in this pose's frame to the world frame.
    pub fn to_world(&self, local: Point2) -> Point2 {
        let (s, c) = self.heading.sin_cos();
        Point2::new(
            self.position.x + c * local.x - s * local.y,
            self.position.y + s * local.x + c * local.y,
        )
    }

    /// Expresses a world point in this pose's frame.
    pub fn to_local(&self, world: Point2) -> Point2 {
        let (s, c) = self.heading.sin_cos();
        let d = world.sub(self.position);
        Point2::new(c * d.x + s * d.y, -s * d.x + c * d.y)
    }

    /// `other` expressed in this pose's frame.
    pub fn relative(&self, other: &Pose2) -> Pose2 {
        let p = self.to_local(other.position);
        Pose2::new(p.x, p.y, other.heading - self.heading)
    }

    /// Pose given in this pose's frame mapped to the world frame.
    pub fn compose(&self, local: &Pose2) -> Pose2 {
        let p = self.to_world(local.position);
        Pose2::new(p.x, p.y, self.heading + local.heading)
    }

    pub fn is_finite(&self) -> bool {
        self.position.is_finite() && self.heading.is_finite()
    }
}

/// Rigid planar motion: rotation by `angle` followed by `translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rigid2 {
    pub angle: f64,
    pub translation: Point2,
}

impl Rigid2 {
    pub fn new(angle: f64, tx: f64, ty: f64) -> Self {
        Self { angle, translation: Point2::new(tx, ty) }
    }

    pub fn point(&self, p: Point2) -> Point2 {
        let (s, c) = self.angle.sin_cos();
        Point2::new(
            c * p.x - s * p.y + self.translation.x,
            s * p.x + c * p.y + self.translation.y,
        )
    }

    pub fn pose(&self, p: &Pose2) -> Pose2 {
        let q = self.point(p.position);
        Pose2::new(q.x, q.y, p.heading + self.angle)
    }

    pub fn quad(&self, q: &Quadrangle) -> Quadrangle {
        Quadrangle { vertices: q.vertices.map(|v| self.point(v)) }
    }

    pub fn free_space(&self, fs: &FreeSpace) -> FreeSpace {
        FreeSpace { quads: fs.quads.iter().map(|q| self.quad(q)).collect() }
    }
}

/// Convex quadrangle with vertices stored counter-clockwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; 2]>", into = "Vec<[f64; 2]>")]
pub struct Quadrangle {
    vertices: [Point2; 4],
}

impl TryFrom<Vec<[f64; 2]>> for Quadrangle {
    type Error = String;

    fn try_from(v: Vec<[f64; 2]>) -> Result<Self, Self::Error> {
        let pts: [[f64; 2]; 4] = v
            .try_into()
            .map_err(|v: Vec<_>| format!("quadrangle needs 4 vertices, got {}", v.len()))?;
        Quadrangle::new(pts.map(Point2::from)).map_err(|e| e.to_string())
    }
}

impl From<Quadrangle> for Vec<[f64; 2]> {
    fn from(q: Quadrangle) -> Self {
        q.vertices.iter().map(|&p| p.into()).collect()
    }
}

impl Quadrangle {
    /// Validates and canonicalizes the vertex cycle to counter-clockwise
    /// order. Any cyclic order is accepted.
    pub fn new(mut vertices: [Point2; 4]) -> Result<Self, GeometryError> {
        if !vertices.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let area = signed_area(&vertices);
        if area < 0.0 {
            vertices.reverse();
        }
        let scale = vertices.iter().map(|v| v.x.abs().max(v.y.abs())).fold(1.0, f64::max);
        if area.abs() <= 1e-12 * scale * scale {
            return Err(GeometryError::Degenerate(area.abs()));
        }
        for i in 0..4 {
            let a = vertices[i];
            let b = vertices[(i + 1) % 4];
            let c = vertices[(i + 2) % 4];
            if b.sub(a).cross(c.sub(b)) <= 0.0 {
                return Err(GeometryError::NonConvex);
            }
        }
        Ok(Self { vertices })
    }

    /// Axis-aligned rectangle `[x0, x1] x [y0, y1]`.
    pub fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self, GeometryError> {
        Self::new([
            Point2::new(x0, y0),
            Point2::new(x1, y0),
            Point2::new(x1, y1),
            Point2::new(x0, y1),
        ])
    }

    pub fn vertices(&self) -> &[Point2; 4] {
        &self.vertices
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.vertices)
    }

    pub fn edge(&self, i: usize) -> (Point2, Point2) {
        (self.vertices[i], self.vertices[(i + 1) % 4])
    }

    /// Same quadrangle with the vertex list rotated by `k` positions.
    pub fn rotated(&self, k: usize) -> Self {
        let mut v = self.vertices;
        v.rotate_left(k % 4);
        Self { vertices: v }
    }

    pub fn contains(&self, p: Point2) -> bool {
        (0..4).all(|i| {
            let (a, b) = self.edge(i);
            b.sub(a).cross(p.sub(a)) >= 0.0
        })
    }

    /// Distance to the quadrangle and its gradient with respect to `p`.
    /// Inside points give `(0, [0, 0])`. Outside, the nearest boundary
    /// feature is selected with ties going to the lowest edge index.
    pub fn distance_with_gradient(&self, p: Point2) -> (f64, [f64; 2]) {
        if self.contains(p) {
            return (0.0, [0.0, 0.0]);
        }
        let mut best = (f64::INFINITY, Point2::default());
        for i in 0..4 {
            let (a, b) = self.edge(i);
            let ab = b.sub(a);
            let t = (p.sub(a).dot(ab) / ab.dot(ab)).clamp(0.0, 1.0);
            let c = a.add(ab.scale(t));
            let d = p.dist(c);
            if d < best.0 {
                best = (d, c);
            }
        }
        let (d, c) = best;
        if d > 0.0 {
            (d, [(p.x - c.x) / d, (p.y - c.y) / d])
        } else {
            (0.0, [0.0, 0.0])
        }
    }

    pub fn distance(&self, p: Point2) -> f64 {
        self.distance_with_gradient(p).0
    }
}

fn signed_area(v: &[Point2; 4]) -> f64 {
    0.5 * (0..4).map(|i| v[i].cross(v[(i + 1) % 4])).sum::<f64>()
}

/// Drivable region: union of convex quadrangles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Quadrangle>", into = "Vec<Quadrangle>")]
pub struct FreeSpace {
    quads: Vec<Quadrangle>,
}

impl TryFrom<Vec<Quadrangle>> for FreeSpace {
    type Error = GeometryError;

    fn try_from(q: Vec<Quadrangle>) -> Result<Self, Self::Error> {
        FreeSpace::new(q)
    }
}

impl From<FreeSpace> for Vec<Quadrangle> {
    fn from(fs: FreeSpace) -> Self {
        fs.quads
    }
}

impl FreeSpace {
    pub fn new(quads: Vec<Quadrangle>) -> Result<Self, GeometryError> {
        if quads.is_empty() {
            return Err(GeometryError::EmptyFreeSpace);
        }
        if quads.len() > MAX_QUADS {
            return Err(GeometryError::TooManyQuads(quads.len()));
        }
        Ok(Self { quads })
    }

    pub fn quads(&self) -> &[Quadrangle] {
        &self.quads
    }

    pub fn contains(&self, p: Point2) -> bool {
        self.quads.iter().any(|q| q.contains(p))
    }

    /// Distance to the union and its gradient. Zero iff some quadrangle
    /// contains `p`; otherwise the lowest-index nearest quadrangle decides.
    pub fn distance_with_gradient(&self, p: Point2) -> (f64, [f64; 2]) {
        if self.contains(p) {
            return (0.0, [0.0, 0.0]);
        }
        let mut best = (f64::INFINITY, [0.0, 0.0]);
        for q in &self.quads {
            let r = q.distance_with_gradient(p);
            if r.0 < best.0 {
                best = r;
            }
        }
        best
    }

    pub fn distance(&self, p: Point2) -> f64 {
        self.distance_with_gradient(p).0
    }

    /// `(min, max)` corners of the axis-aligned bounding box.
    pub fn bounding_box(&self) -> (Point2, Point2) {
        let mut lo = Point2::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for v in self.quads.iter().flat_map(|q| q.vertices.iter()) {
            lo = Point2::new(lo.x.min(v.x), lo.y.min(v.y));
            hi = Point2::new(hi.x.max(v.x), hi.y.max(v.y));
        }
        (lo, hi)
    }
}

pub fn contains(quad: &Quadrangle, p: Point2) -> bool {
    quad.contains(p)
}

pub fn dist_to_quad(quad: &Quadrangle, p: Point2) -> f64 {
    quad.distance(p)
}

pub fn dist_to_freespace(fs: &FreeSpace, p: Point2) -> f64 {
    fs.distance(p)
}

/// Differentiable distance from `(x, y)` to the free space.
pub fn dist_to_freespace_r<R: Real>(fs: &FreeSpace, x: R, y: R) -> R {
    let (d, [gx, gy]) = fs.distance_with_gradient(Point2::new(x.value(), y.value()));
    x.custom(d, &[(x, gx), (y, gy)])
}

/// Differentiable distance from `(x, y)` to one quadrangle.
pub fn dist_to_quad_r<R: Real>(quad: &Quadrangle, x: R, y: R) -> R {
    let (d, [gx, gy]) = quad.distance_with_gradient(Point2::new(x.value(), y.value()));
    x.custom(d, &[(x, gx), (y, gy)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use proptest::prelude::*;

    fn unit() -> Quadrangle {
        Quadrangle::rect(0.0, 0.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn containment_examples() {
        let q = unit();
        assert!(contains(&q, Point2::new(0.5, 0.5)));
        assert!(!contains(&q, Point2::new(2.0, 0.5)));
        assert!(contains(&q, Point2::new(1.0, 0.5)));
    }

    #[test]
    fn distance_examples() {
        let q = unit();
        assert_eq!(dist_to_quad(&q, Point2::new(0.5, 0.5)), 0.0);
        assert!((dist_to_quad(&q, Point2::new(2.0, 0.5)) - 1.0).abs() < 1e-15);
        assert!((dist_to_quad(&q, Point2::new(2.0, 2.0)) - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn freespace_examples() {
        let fs = FreeSpace::new(vec![unit(), Quadrangle::rect(1.0, 0.0, 2.0, 1.0).unwrap()]).unwrap();
        assert_eq!(dist_to_freespace(&fs, Point2::new(1.5, 0.5)), 0.0);
        let fs = FreeSpace::new(vec![unit()]).unwrap();
        assert!((dist_to_freespace(&fs, Point2::new(-1.0, 0.5)) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn orientation_is_canonicalized() {
        let cw = Quadrangle::new([
            Point2::new(0.0, 0.0),
            Point2::new(0.0, 1.0),
            Point2::new(1.0, 1.0),
            Point2::new(1.0, 0.0),
        ])
        .unwrap();
        assert!(cw.area() > 0.0);
        assert!(cw.contains(Point2::new(0.5, 0.5)));
    }

    #[test]
    fn invalid_quads_rejected() {
        let dart = [
            Point2::new(0.0, 0.0),
            Point2::new(2.0, 1.0),
            Point2::new(0.0, 2.0),
            Point2::new(0.5, 1.0),
        ];
        assert_eq!(Quadrangle::new(dart), Err(GeometryError::NonConvex));
        let flat = [Point2::new(0.0, 0.0), Point2::new(1.0, 0.0), Point2::new(2.0, 0.0), Point2::new(3.0, 0.0)];
        assert!(matches!(Quadrangle::new(flat), Err(GeometryError::Degenerate(_))));
        let bowtie = [Point2::new(0.0, 0.0), Point2::new(1.0, 1.0), Point2::new(1.0, 0.0), Point2::new(0.0, 1.0)];
        assert!(Quadrangle::new(bowtie).is_err());
        assert_eq!(FreeSpace::new(vec![]), Err(GeometryError::EmptyFreeSpace));
        assert_eq!(FreeSpace::new(vec![unit(); MAX_QUADS + 1]), Err(GeometryError::TooManyQuads(MAX_QUADS + 1)));
    }

    #[test]
    fn json_round_trip_any_cyclic_order() {
        let q: Quadrangle = serde_json::from_str("[[1,1],[0,1],[0,0],[1,0]]").unwrap();
        assert!(q.area() > 0.0);
        let s = serde_json::to_string(&q).unwrap();
        let back: Quadrangle = serde_json::from_str(&s).unwrap();
        assert_eq!(q, back);
        assert!(serde_json::from_str::<Quadrangle>("[[0,0],[1,0],[1,1]]").is_err());
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn differentiable_distance_records_gradient() {
        let q = unit();
        let t = Tape::new();
        let x = t.var(2.0);
        let y = t.var(2.0);
        let d = dist_to_quad_r(&q, x, y);
        let g = t.backward(d).unwrap();
        let s = 0.5f64.sqrt();
        assert!((g.wrt(x) - s).abs() < 1e-12 && (g.wrt(y) - s).abs() < 1e-12);
    }

    fn arb_quad() -> impl Strategy<Value = Quadrangle> {
        (-5.0..5.0f64, -5.0..5.0f64, 0.5..4.0f64, 0.5..4.0f64, -3.2..3.2f64, 0.0..0.4f64).prop_map(
            |(cx, cy, w, h, ang, skew)| {
                let r = Rigid2::new(ang, cx, cy);
                let q = Quadrangle::new([
                    Point2::new(-w, -h),
                    Point2::new(w, -h * (1.0 - skew)),
                    Point2::new(w * (1.0 - skew), h),
                    Point2::new(-w, h),
                ])
                .unwrap();
                r.quad(&q)
            },
        )
    }

    proptest! {
        #[test]
        fn distance_is_one_lipschitz(q in arb_quad(), a in (-10.0..10.0f64, -10.0..10.0f64), b in (-10.0..10.0f64, -10.0..10.0f64)) {
            let p1 = Point2::new(a.0, a.1);
            let p2 = Point2::new(b.0, b.1);
            prop_assert!((q.distance(p1) - q.distance(p2)).abs() <= p1.dist(p2) + 1e-12);
        }

        #[test]
        fn distance_is_rigid_invariant(q in arb_quad(), p in (-10.0..10.0f64, -10.0..10.0f64), ang in -3.2..3.2f64, t in (-20.0..20.0f64, -20.0..20.0f64)) {
            let r = Rigid2::new(ang, t.0, t.1);
            let p = Point2::new(p.0, p.1);
            prop_assert!((q.distance(p) - r.quad(&q).distance(r.point(p))).abs() < 1e-9);
        }

        #[test]
        fn zero_distance_iff_contained(qs in proptest::collection::vec(arb_quad(), 1..4), p in (-8.0..8.0f64, -8.0..8.0f64)) {
            let fs = FreeSpace::new(qs).unwrap();
            let p = Point2::new(p.0, p.1);
            prop_assert_eq!(fs.distance(p) == 0.0, fs.quads().iter().any(|q| q.contains(p)));
        }

        #[test]
        fn gradient_matches_finite_differences(q in arb_quad(), p in (-10.0..10.0f64, -10.0..10.0f64)) {
            let p = Point2::new(p.0, p.1);
            let d = q.distance(p);
            // Stay clear of the boundary and of nearest-feature switches.
            let h = 1e-6;
            let probe = 1e-3;
            let stable = [(probe, 0.0), (-probe, 0.0), (0.0, probe), (0.0, -probe)].iter().all(|&(dx, dy)| {
                let (_, g0) = q.distance_with_gradient(p);
                let (d1, g1) = q.distance_with_gradient(Point2::new(p.x + dx, p.y + dy));
                d1 > 0.0 && (g0[0] - g1[0]).abs() + (g0[1] - g1[1]).abs() < 0.5
            });
            prop_assume!(d > 1e-3 && stable);
            let (_, g) = q.distance_with_gradient(p);
            let fx = (q.distance(Point2::new(p.x + h, p.y)) - q.distance(Point2::new(p.x - h, p.y))) / (2.0 * h);
            let fy = (q.distance(Point2::new(p.x, p.y + h)) - q.distance(Point2::new(p.x, p.y - h))) / (2.0 * h);
            let scale = g[0].abs().max(g[1].abs());
            prop_assert!((fx - g[0]).abs() <= 1e-4 * scale.max(1e-6));
            prop_assert!((fy - g[1]).abs() <= 1e-4 * scale.max(1e-6));
        }
    }
}
