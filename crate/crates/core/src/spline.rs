//! Quintic-spline paths built from gluing points expressed in chained local
//! frames.
//!
//! Segment `i` is an explicit polynomial `y(x)` in the frame attached to
//! the previous gluing point (the first frame is the start pose). Each new
//! frame sits at the previous segment's end with its x axis along the
//! tangent, so the slope there is zero and the curvature equals `y''`; the
//! next segment starts with `y(0) = y'(0) = 0` and `y''(0)` equal to the
//! carried curvature, which makes the path C2 in the world frame. The last
//! segment is solved in closed form to reach the goal with zero curvature.

use std::f64::consts::{FRAC_PI_2, TAU};

use serde::{Deserialize, Serialize};

use crate::autodiff::Real;
use crate::geometry::{wrap_angle, Point2, Pose2};
use crate::linalg;

pub const DEFAULT_SEGMENTS: usize = 7;
pub const SAMPLES_PER_SEGMENT: usize = 128;
/// Smallest admissible forward extent of a segment.
pub const MIN_SPAN: f64 = 0.1;
/// Segment systems above this 1-norm condition number are rejected.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SplineError {
    #[error("segment span {0} is below the minimum {MIN_SPAN}")]
    SpanTooSmall(f64),
    #[error("segment system is ill-conditioned (condition number {0:e})")]
    IllConditioned(f64),
    #[error("goal lies at local x = {0} behind the last gluing point")]
    Overshoot(f64),
    #[error("goal heading differs by {0} rad from the last gluing point")]
    HeadingOvershoot(f64),
    #[error("non-finite spline input")]
    NonFinite,
}

/// Junction between two segments, expressed in the previous junction's
/// frame: position, slope and second derivative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct GluingPoint {
    pub x: f64,
    pub y: f64,
    pub dy: f64,
    pub ddy: f64,
}

impl From<[f64; 4]> for GluingPoint {
    fn from([x, y, dy, ddy]: [f64; 4]) -> Self {
        Self { x, y, dy, ddy }
    }
}

impl From<GluingPoint> for [f64; 4] {
    fn from(g: GluingPoint) -> Self {
        [g.x, g.y, g.dy, g.ddy]
    }
}

impl GluingPoint {
    pub fn new(x: f64, y: f64, dy: f64, ddy: f64) -> Self {
        Self { x, y, dy, ddy }
    }

    /// Gluing point that lands on the local pose `p` with zero curvature.
    pub fn at_pose(p: &Pose2) -> Self {
        Self::new(p.x(), p.y(), p.heading.tan(), 0.0)
    }
}

/// Differentiable gluing point.
#[derive(Debug, Clone, Copy)]
pub struct GluingPointR<R> {
    pub x: R,
    pub y: R,
    pub dy: R,
    pub ddy: R,
}

impl<R: Real> GluingPointR<R> {
    pub fn value(&self) -> GluingPoint {
        GluingPoint::new(self.x.value(), self.y.value(), self.dy.value(), self.ddy.value())
    }
}

impl GluingPointR<f64> {
    pub fn from_plain(g: &GluingPoint) -> Self {
        Self { x: g.x, y: g.y, dy: g.dy, ddy: g.ddy }
    }
}

/// Pose of a local frame, carrying its heading's cosine and sine.
#[derive(Debug, Clone, Copy)]
pub struct FrameR<R> {
    pub x: R,
    pub y: R,
    pub heading: R,
    pub cos: R,
    pub sin: R,
}

impl<R: Real> FrameR<R> {
    pub fn from_pose(ctx: R, p: &Pose2) -> Self {
        let (s, c) = p.heading.sin_cos();
        Self {
            x: ctx.lift(p.x()),
            y: ctx.lift(p.y()),
            heading: ctx.lift(p.heading),
            cos: ctx.lift(c),
            sin: ctx.lift(s),
        }
    }

    pub fn to_world(&self, lx: R, ly: R) -> (R, R) {
        (self.x + self.cos * lx - self.sin * ly, self.y + self.sin * lx + self.cos * ly)
    }

    pub fn to_local(&self, wx: R, wy: R) -> (R, R) {
        let dx = wx - self.x;
        let dy = wy - self.y;
        (self.cos * dx + self.sin * dy, self.cos * dy - self.sin * dx)
    }

    pub fn pose(&self) -> Pose2 {
        Pose2::new(self.x.value(), self.y.value(), self.heading.value())
    }
}

/// Evaluates `(y, y', y'')` of a quintic at `x` by Horner's rule.
pub fn poly_eval<R: Real>(c: &[R; 6], x: R) -> (R, R, R) {
    let y = ((((c[5] * x + c[4]) * x + c[3]) * x + c[2]) * x + c[1]) * x + c[0];
    let d1 = (((c[5] * 5.0 * x + c[4] * 4.0) * x + c[3] * 3.0) * x + c[2] * 2.0) * x + c[1];
    let d2 = ((c[5] * 20.0 * x + c[4] * 12.0) * x + c[3] * 6.0) * x + c[2] * 2.0;
    (y, d1, d2)
}

/// Slope of a quintic at `x`.
pub fn poly_slope<R: Real>(c: &[R; 6], x: R) -> R {
    (((c[5] * 5.0 * x + c[4] * 4.0) * x + c[3] * 3.0) * x + c[2] * 2.0) * x + c[1]
}

/// Curvature of an explicit curve from its first and second derivative.
pub fn curvature<R: Real>(d1: R, d2: R) -> R {
    let q = d1 * d1 + 1.0;
    d2 / (q * q.sqrt())
}

fn segment_matrix(x: f64) -> linalg::Mat6 {
    let x2 = x * x;
    let x3 = x2 * x;
    let x4 = x3 * x;
    let x5 = x4 * x;
    [
        [1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [0.0, 1.0, 0.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 2.0, 0.0, 0.0, 0.0],
        [1.0, x, x2, x3, x4, x5],
        [0.0, 1.0, 2.0 * x, 3.0 * x2, 4.0 * x3, 5.0 * x4],
        [0.0, 0.0, 2.0, 6.0 * x, 12.0 * x2, 20.0 * x3],
    ]
}

/// Quintic coefficients for a segment starting at the local origin along
/// the x axis with curvature `start_curv` and ending at `gp`.
pub fn solve_segment_r<R: Real>(start_curv: R, gp: &GluingPointR<R>) -> Result<[R; 6], SplineError> {
    let x = gp.x;
    let xv = x.value();
    if !xv.is_finite() || !gp.y.value().is_finite() || !gp.dy.value().is_finite() || !gp.ddy.value().is_finite() {
        return Err(SplineError::NonFinite);
    }
    if xv < MIN_SPAN {
        return Err(SplineError::SpanTooSmall(xv));
    }
    check_condition(xv)?;
    let zero = x.lift(0.0);
    let one = x.lift(1.0);
    let two = x.lift(2.0);
    let x2 = x * x;
    let x3 = x2 * x;
    let x4 = x3 * x;
    let x5 = x4 * x;
    let a = [
        [one, zero, zero, zero, zero, zero],
        [zero, one, zero, zero, zero, zero],
        [zero, zero, two, zero, zero, zero],
        [one, x, x2, x3, x4, x5],
        [zero, one, x * 2.0, x2 * 3.0, x3 * 4.0, x4 * 5.0],
        [zero, zero, two, x * 6.0, x2 * 12.0, x3 * 20.0],
    ];
    let b = [zero, zero, start_curv, gp.y, gp.dy, gp.ddy];
    R::solve6(&a, &b).map_err(|_| SplineError::IllConditioned(f64::INFINITY))
}

fn check_condition(x: f64) -> Result<(), SplineError> {
    let cond = linalg::condition_number(&segment_matrix(x));
    if cond > MAX_CONDITION || !cond.is_finite() {
        return Err(SplineError::IllConditioned(cond));
    }
    Ok(())
}

/// 1-norm condition number of the segment system for span `x`.
pub fn segment_condition(x: f64) -> f64 {
    linalg::condition_number(&segment_matrix(x))
}

/// One solved segment (differentiable form).
#[derive(Debug, Clone, Copy)]
pub struct SegmentR<R> {
    pub coeffs: [R; 6],
    pub span: R,
    pub frame: FrameR<R>,
}

impl<R: Real> SegmentR<R> {
    pub fn plain(&self) -> QuinticSegment {
        QuinticSegment {
            coeffs: self.coeffs.map(|c| c.value()),
            span: self.span.value(),
            frame: self.frame.pose(),
        }
    }
}

/// Incrementally built chain of segments.
#[derive(Debug, Clone)]
pub struct Chain<R> {
    pub segments: Vec<SegmentR<R>>,
    /// Frame of the most recent gluing point (start pose initially).
    pub frame: FrameR<R>,
    /// Curvature carried into the next segment.
    pub curvature: R,
}

impl<R: Real> Chain<R> {
    pub fn start(ctx: R, q0: &Pose2) -> Self {
        Self { segments: Vec::new(), frame: FrameR::from_pose(ctx, q0), curvature: ctx.lift(0.0) }
    }

    /// Appends a segment ending at `gp` and moves the frame there.
    pub fn push(&mut self, gp: &GluingPointR<R>) -> Result<(), SplineError> {
        let coeffs = solve_segment_r(self.curvature, gp)?;
        self.segments.push(SegmentR { coeffs, span: gp.x, frame: self.frame });
        let (wx, wy) = self.frame.to_world(gp.x, gp.y);
        let q = gp.dy * gp.dy + 1.0;
        let inv = q.sqrt().lift(1.0) / q.sqrt();
        let (ca, sa) = (inv, gp.dy * inv);
        self.frame = FrameR {
            x: wx,
            y: wy,
            heading: self.frame.heading + gp.dy.atan(),
            cos: self.frame.cos * ca - self.frame.sin * sa,
            sin: self.frame.sin * ca + self.frame.cos * sa,
        };
        self.curvature = gp.ddy / (q * q.sqrt());
        Ok(())
    }

    /// Boundary conditions of the closing segment towards `qd`, in the
    /// current frame.
    pub fn closing_point(&self, qd: &Pose2) -> Result<GluingPointR<R>, SplineError> {
        let ctx = self.frame.x;
        let (lx, ly) = self.frame.to_local(ctx.lift(qd.x()), ctx.lift(qd.y()));
        if lx.value() <= 0.0 {
            return Err(SplineError::Overshoot(lx.value()));
        }
        let raw = ctx.lift(qd.heading) - self.frame.heading;
        let shift = TAU * (raw.value() / TAU).round();
        let dtheta = raw - shift;
        if dtheta.value().abs() >= FRAC_PI_2 {
            return Err(SplineError::HeadingOvershoot(dtheta.value()));
        }
        Ok(GluingPointR { x: lx, y: ly, dy: dtheta.tan(), ddy: ctx.lift(0.0) })
    }

    /// Closes the chain at `qd` with zero end curvature.
    pub fn close(&mut self, qd: &Pose2) -> Result<(), SplineError> {
        let gp = self.closing_point(qd)?;
        let coeffs = solve_segment_r(self.curvature, &gp)?;
        self.segments.push(SegmentR { coeffs, span: gp.x, frame: self.frame });
        Ok(())
    }
}

/// One quintic segment `y(x) = sum a_j x^j` on `[0, span]` in `frame`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuinticSegment {
    pub coeffs: [f64; 6],
    pub span: f64,
    pub frame: Pose2,
}

impl QuinticSegment {
    pub fn eval(&self, x: f64) -> (f64, f64, f64) {
        poly_eval(&self.coeffs, x)
    }

    pub fn curvature_at(&self, x: f64) -> f64 {
        let (_, d1, d2) = self.eval(x);
        curvature(d1, d2)
    }

    /// World pose at local `x`.
    pub fn pose_at(&self, x: f64) -> Pose2 {
        let (y, d1, _) = self.eval(x);
        let p = self.frame.to_world(Point2::new(x, y));
        Pose2::new(p.x, p.y, self.frame.heading + d1.atan())
    }

    pub fn end_pose(&self) -> Pose2 {
        self.pose_at(self.span)
    }

    pub fn arc_length(&self) -> f64 {
        arc_length_r(&self.coeffs, self.span)
    }
}

/// Five-point Gauss-Legendre nodes and weights on [-1, 1].
const GL_NODES: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683,
    0.0,
    0.538_469_310_105_683,
    0.906_179_845_938_664,
];
const GL_WEIGHTS: [f64; 5] = [
    0.236_926_885_056_189_1,
    0.478_628_670_499_366_5,
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_5,
    0.236_926_885_056_189_1,
];
const GL_PANELS: usize = 32;

/// Arc length of `y(x)` over `[0, span]`, composite Gauss-Legendre with 32
/// panels of 5 nodes. Recorded as a single node whose partials are the
/// exact derivatives of the quadrature.
pub fn arc_length_r<R: Real>(coeffs: &[R; 6], span: R) -> R {
    let a = coeffs.map(|c| c.value());
    let s = span.value();
    let h = s / GL_PANELS as f64;
    let mut total = 0.0;
    let mut d_span = 0.0;
    let mut d_a = [0.0; 6];
    for k in 0..GL_PANELS {
        let mut panel = 0.0;
        for (xi, w) in GL_NODES.iter().zip(GL_WEIGHTS) {
            let node = (k as f64 + 0.5 * (1.0 + xi)) / GL_PANELS as f64;
            let x = h * (k as f64 + 0.5 * (1.0 + xi));
            let (_, d1, d2) = poly_eval(&a, x);
            let g = (d1 * d1 + 1.0).sqrt();
            panel += g * w;
            let slope = w * d1 / g;
            d_span += slope * d2 * node;
            let mut pw = 1.0;
            for (j, da) in d_a.iter_mut().enumerate().skip(1) {
                *da += slope * j as f64 * pw;
                pw *= x;
            }
        }
        total += panel;
    }
    let scale = h * 0.5;
    let value = total * scale;
    let mut partials: Vec<(R, f64)> = coeffs.iter().zip(d_a).map(|(&c, d)| (c, d * scale)).collect();
    partials.push((span, total * 0.5 / GL_PANELS as f64 + scale * d_span));
    span.custom(value, &partials)
}

pub fn arc_length(segment: &QuinticSegment) -> f64 {
    segment.arc_length()
}

/// Coefficients of a single segment from the local origin to `gp`.
pub fn solve_segment(start_curv: f64, gp: &GluingPoint) -> Result<[f64; 6], SplineError> {
    solve_segment_r(start_curv, &GluingPointR::from_plain(gp))
}

/// Complete path from `q0` through the gluing points to `qd`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSpline {
    pub q0: Pose2,
    pub qd: Pose2,
    pub gluing_points: Vec<GluingPoint>,
    pub segments: Vec<QuinticSegment>,
}

impl PathSpline {
    pub fn segment_count(&self) -> usize {
        self.segments.len()
    }

    pub fn lengths(&self) -> Vec<f64> {
        self.segments.iter().map(QuinticSegment::arc_length).collect()
    }

    pub fn length(&self) -> f64 {
        self.lengths().iter().sum()
    }

    /// World pose of the last gluing point (the start pose for a single
    /// segment path).
    pub fn last_gluing_pose(&self) -> Pose2 {
        self.segments.last().map(|s| s.frame).unwrap_or(self.q0)
    }

    /// Rebuilds the segments from the stored endpoints and gluing points.
    pub fn reassemble(&self) -> Result<PathSpline, SplineError> {
        assemble(&self.q0, &self.gluing_points, &self.qd)
    }
}

/// Builds the spline through `gps` (each in the previous frame) and closes
/// it at `qd`.
pub fn assemble(q0: &Pose2, gps: &[GluingPoint], qd: &Pose2) -> Result<PathSpline, SplineError> {
    if !q0.is_finite() || !qd.is_finite() {
        return Err(SplineError::NonFinite);
    }
    let mut chain = Chain::start(0.0, q0);
    for gp in gps {
        chain.push(&GluingPointR::from_plain(gp))?;
    }
    chain.close(qd)?;
    Ok(PathSpline {
        q0: *q0,
        qd: *qd,
        gluing_points: gps.to_vec(),
        segments: chain.segments.iter().map(SegmentR::plain).collect(),
    })
}

/// One path sample in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathSample {
    pub position: Point2,
    pub heading: f64,
    pub curvature: f64,
    pub local_x: f64,
}

/// Samples per segment at equal local-x spacing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledPath {
    pub segments: Vec<Vec<PathSample>>,
}

impl SampledPath {
    pub fn len(&self) -> usize {
        self.segments.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = &PathSample> {
        self.segments.iter().flatten()
    }
}

/// Differentiable sample: world position, tangent direction cosines and
/// curvature.
#[derive(Debug, Clone, Copy)]
pub struct SampleR<R> {
    pub x: R,
    pub y: R,
    pub cos: R,
    pub sin: R,
    pub curvature: R,
}

/// `n` samples at local x = span * j / (n - 1). Each sample component is a
/// single node with closed-form partials in the coefficients, the span and
/// the frame.
pub fn sample_segment_r<R: Real>(seg: &SegmentR<R>, n: usize) -> Vec<SampleR<R>> {
    let f = &seg.frame;
    let a = seg.coeffs.map(|c| c.value());
    let span = seg.span.value();
    let (fx, fy, fc, fs) = (f.x.value(), f.y.value(), f.cos.value(), f.sin.value());
    let c = &seg.coeffs;
    let inputs = [c[0], c[1], c[2], c[3], c[4], c[5], seg.span, f.x, f.y, f.cos, f.sin];
    (0..n)
        .map(|j| {
            let t = j as f64 / (n - 1) as f64;
            let x = span * t;
            let (y, d1, d2) = poly_eval(&a, x);
            let mut p = [1.0; 6];
            for k in 1..6 {
                p[k] = p[k - 1] * x;
            }
            let d3 = 6.0 * a[3] + 24.0 * a[4] * x + 60.0 * a[5] * p[2];
            // Partials of y, y', y'' with respect to a_0..a_5 and span.
            let mut dy = [0.0; 7];
            let mut dd1 = [0.0; 7];
            let mut dd2 = [0.0; 7];
            for k in 0..6 {
                dy[k] = p[k];
                if k >= 1 {
                    dd1[k] = k as f64 * p[k - 1];
                }
                if k >= 2 {
                    dd2[k] = (k * (k - 1)) as f64 * p[k - 2];
                }
            }
            dy[6] = d1 * t;
            dd1[6] = d2 * t;
            dd2[6] = d3 * t;

            let q = d1 * d1 + 1.0;
            let r = q.sqrt();
            let (ct, st) = (1.0 / r, d1 / r);
            let (dct, dst) = (-d1 / (q * r), 1.0 / (q * r));
            let kappa = d2 / (q * r);
            let (dk1, dk2) = (-3.0 * d1 * d2 / (q * q * r), 1.0 / (q * r));

            let mut gwx = [0.0; 11];
            let mut gwy = [0.0; 11];
            let mut gc = [0.0; 11];
            let mut gs = [0.0; 11];
            let mut gk = [0.0; 11];
            for i in 0..7 {
                gwx[i] = -fs * dy[i];
                gwy[i] = fc * dy[i];
                gc[i] = (fc * dct - fs * dst) * dd1[i];
                gs[i] = (fs * dct + fc * dst) * dd1[i];
                gk[i] = dk1 * dd1[i] + dk2 * dd2[i];
            }
            gwx[6] += fc * t;
            gwy[6] += fs * t;
            gwx[7] = 1.0;
            gwy[8] = 1.0;
            gwx[9] = x;
            gwx[10] = -y;
            gwy[9] = y;
            gwy[10] = x;
            gc[9] = ct;
            gc[10] = -st;
            gs[9] = st;
            gs[10] = ct;

            let node = |value: f64, g: &[f64; 11]| {
                let partials: Vec<(R, f64)> =
                    inputs.iter().zip(g).filter(|(_, &d)| d != 0.0).map(|(&v, &d)| (v, d)).collect();
                seg.span.custom(value, &partials)
            };
            SampleR {
                x: node(fx + fc * x - fs * y, &gwx),
                y: node(fy + fs * x + fc * y, &gwy),
                cos: node(fc * ct - fs * st, &gc),
                sin: node(fs * ct + fc * st, &gs),
                curvature: node(kappa, &gk),
            }
        })
        .collect()
}

pub fn sample_with(path: &PathSpline, n: usize) -> SampledPath {
    let segments = path
        .segments
        .iter()
        .map(|s| {
            (0..n)
                .map(|j| {
                    let x = s.span * (j as f64 / (n - 1) as f64);
                    let (y, d1, d2) = s.eval(x);
                    plain_sample(s, x, y, d1, d2)
                })
                .collect()
        })
        .collect();
    SampledPath { segments }
}

fn plain_sample(s: &QuinticSegment, x: f64, y: f64, d1: f64, d2: f64) -> PathSample {
    PathSample {
        position: s.frame.to_world(Point2::new(x, y)),
        heading: wrap_angle(s.frame.heading + d1.atan()),
        curvature: curvature(d1, d2),
        local_x: x,
    }
}

/// 128 samples per segment.
pub fn sample(path: &PathSpline) -> SampledPath {
    sample_with(path, SAMPLES_PER_SEGMENT)
}

/// Largest position, tangent and curvature jumps over all junctions.
pub fn junction_gaps(path: &PathSpline) -> (f64, f64, f64) {
    let mut gaps = (0.0f64, 0.0f64, 0.0f64);
    for w in path.segments.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let end = a.pose_at(a.span);
        let start = b.pose_at(0.0);
        gaps.0 = gaps.0.max(end.position.dist(start.position));
        gaps.1 = gaps.1.max(wrap_angle(end.heading - start.heading).abs());
        gaps.2 = gaps.2.max((a.curvature_at(a.span) - b.curvature_at(0.0)).abs());
    }
    gaps
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;

    #[test]
    fn straight_segment_is_zero() {
        let c = solve_segment(0.0, &GluingPoint::new(5.0, 0.0, 0.0, 0.0)).unwrap();
        assert!(c.iter().all(|&a| a.abs() < 1e-15));
    }

    #[test]
    fn unit_endpoint_conditions() {
        let c = solve_segment(0.0, &GluingPoint::new(1.0, 1.0, 0.0, 0.0)).unwrap();
        assert!(c[0].abs() < 1e-15 && c[1].abs() < 1e-15 && c[2].abs() < 1e-15);
        let (y, d1, d2) = poly_eval(&c, 1.0);
        assert!((y - 1.0).abs() < 1e-12 && d1.abs() < 1e-12 && d2.abs() < 1e-12);
        // Closed form of the minimum-jerk step: 10x^3 - 15x^4 + 6x^5.
        assert!((c[3] - 10.0).abs() < 1e-10 && (c[4] + 15.0).abs() < 1e-10 && (c[5] - 6.0).abs() < 1e-10);
    }

    #[test]
    fn short_spans_rejected_and_minimum_span_solvable() {
        assert!(matches!(
            solve_segment(0.0, &GluingPoint::new(0.05, 0.0, 0.0, 0.0)),
            Err(SplineError::SpanTooSmall(_))
        ));
        let cond = segment_condition(MIN_SPAN);
        assert!(cond.is_finite() && cond < MAX_CONDITION);
        assert!(solve_segment(0.3, &GluingPoint::new(MIN_SPAN, 0.01, 0.2, -0.4)).is_ok());
    }

    #[test]
    fn straight_assembly() {
        let d = 5.0;
        let gps = vec![GluingPoint::new(d, 0.0, 0.0, 0.0); 6];
        let p = assemble(&Pose2::new(0.0, 0.0, 0.0), &gps, &Pose2::new(7.0 * d, 0.0, 0.0)).unwrap();
        assert_eq!(p.segment_count(), 7);
        for s in &p.segments {
            assert!(s.coeffs.iter().all(|a| a.abs() < 1e-12));
        }
        assert!((p.length() - 7.0 * d).abs() < 1e-9);
        let sp = sample(&p);
        assert_eq!(sp.len(), 128 * 7);
        assert!(sp.iter().all(|s| s.curvature.abs() < 1e-12 && s.heading.abs() < 1e-12));
    }

    #[test]
    fn overshoot_is_distinct_error() {
        let gps = vec![GluingPoint::new(5.0, 0.0, 0.0, 0.0)];
        let e = assemble(&Pose2::new(0.0, 0.0, 0.0), &gps, &Pose2::new(3.0, 0.0, 0.0)).unwrap_err();
        assert!(matches!(e, SplineError::Overshoot(_)));
        let e = assemble(&Pose2::new(0.0, 0.0, 0.0), &gps, &Pose2::new(9.0, 0.0, 2.0)).unwrap_err();
        assert!(matches!(e, SplineError::HeadingOvershoot(_)));
    }

    #[test]
    fn arc_length_examples() {
        let s = QuinticSegment { coeffs: [0.0; 6], span: 5.0, frame: Pose2::default() };
        assert!((s.arc_length() - 5.0).abs() < 1e-12);
        let s = QuinticSegment { coeffs: [0.0, 1.0, 0.0, 0.0, 0.0, 0.0], span: 1.0, frame: Pose2::default() };
        assert!((s.arc_length() - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn chain_gradient_matches_finite_differences() {
        let q0 = Pose2::new(1.0, -2.0, 0.3);
        let qd = Pose2::new(20.0, 3.0, 0.1);
        let base = [4.0, 0.5, 0.1, 0.02, 5.0, -0.3, -0.1, 0.01];
        let eval = |v: &[f64]| -> f64 {
            let mut c = Chain::start(0.0, &q0);
            c.push(&GluingPointR { x: v[0], y: v[1], dy: v[2], ddy: v[3] }).unwrap();
            c.push(&GluingPointR { x: v[4], y: v[5], dy: v[6], ddy: v[7] }).unwrap();
            c.close(&qd).unwrap();
            c.segments
                .iter()
                .map(|s| {
                    let smp = sample_segment_r(s, 16);
                    arc_length_r(&s.coeffs, s.span)
                        + smp.iter().map(|p| p.x * 0.1 + p.y * p.y * 0.01 + p.curvature + p.sin).sum::<f64>()
                })
                .sum()
        };
        let t = Tape::new();
        let vars: Vec<_> = base.iter().map(|&v| t.var(v)).collect();
        let mut c = Chain::start(vars[0], &q0);
        c.push(&GluingPointR { x: vars[0], y: vars[1], dy: vars[2], ddy: vars[3] }).unwrap();
        c.push(&GluingPointR { x: vars[4], y: vars[5], dy: vars[6], ddy: vars[7] }).unwrap();
        c.close(&qd).unwrap();
        let mut total = t.constant(0.0);
        for s in &c.segments {
            total = total + arc_length_r(&s.coeffs, s.span);
            for p in sample_segment_r(s, 16) {
                total = total + p.x * 0.1 + p.y * p.y * 0.01 + p.curvature + p.sin;
            }
        }
        assert!((total.value() - eval(&base)).abs() < 1e-9);
        let g = t.backward(total).unwrap();
        let h = 1e-6;
        for i in 0..base.len() {
            let mut p = base;
            let mut m = base;
            p[i] += h;
            m[i] -= h;
            let num = (eval(&p) - eval(&m)) / (2.0 * h);
            let an = g.wrt(vars[i]);
            assert!((an - num).abs() <= 1e-4 * an.abs().max(num.abs()).max(1e-3), "param {i}: {an} vs {num}");
        }
    }
}
