//! Independent feasibility check for assembled paths.
//!
//! Sampling, curvature and footprint placement are computed here from the
//! raw polynomial coefficients; only the quadrangle edge primitive is shared
//! with the rest of the crate, so a defect in the training losses cannot
//! certify its own output.

use serde::{Deserialize, Serialize};

use crate::geometry::{wrap_angle, FreeSpace, Point2, Pose2};
use crate::spline::{PathSpline, QuinticSegment};
use crate::vehicle::VehicleParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Validator {
    /// Samples per segment, endpoints included.
    pub samples: usize,
    /// Also check the midpoint between consecutive samples.
    pub refine: bool,
    pub kappa_tol: f64,
    pub containment_tol: f64,
    pub endpoint_tol: f64,
}

impl Default for Validator {
    fn default() -> Self {
        Self { samples: 128, refine: true, kappa_tol: 1e-6, containment_tol: 1e-9, endpoint_tol: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    /// A footprint point (0 = guiding point, 1..=4 corners) outside the free space.
    Collision { segment: usize, sample: usize, point: usize, at: [f64; 2] },
    Curvature { segment: usize, sample: usize, kappa: f64 },
    Endpoint { end: String, position_error: f64, heading_error: f64 },
    /// Segment span not positive, or the final segment does not approach the
    /// goal from behind.
    NonMonotonic { segment: usize },
    NonFinite { segment: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub accepted: bool,
    pub violations: Vec<Violation>,
}

struct LocalSample {
    x: f64,
    y: f64,
    slope: f64,
    kappa: f64,
}

fn sample_poly(c: &[f64; 6], x: f64) -> LocalSample {
    let mut y = 0.0;
    let mut d1 = 0.0;
    let mut d2 = 0.0;
    let mut pow = 1.0;
    for (k, &ck) in c.iter().enumerate() {
        y += ck * pow;
        if k >= 1 {
            d1 += k as f64 * ck * x.powi(k as i32 - 1);
        }
        if k >= 2 {
            d2 += (k * (k - 1)) as f64 * ck * x.powi(k as i32 - 2);
        }
        pow *= x;
    }
    LocalSample { x, y, slope: d1, kappa: d2 / (1.0 + d1 * d1).powf(1.5) }
}

fn world(frame: &Pose2, lx: f64, ly: f64) -> Point2 {
    let (s, c) = frame.heading.sin_cos();
    Point2::new(frame.position.x + c * lx - s * ly, frame.position.y + s * lx + c * ly)
}

fn inside(fs: &FreeSpace, p: Point2, tol: f64) -> bool {
    fs.quads().iter().any(|q| {
        (0..4).all(|i| {
            let (a, b) = q.edge(i);
            let e = b.sub(a);
            e.cross(p.sub(a)) / e.norm() >= -tol
        })
    })
}

fn body_points(pos: Point2, heading: f64, params: &VehicleParams) -> [Point2; 5] {
    let (s, c) = heading.sin_cos();
    let hw = params.width / 2.0;
    let at = |fx: f64, fy: f64| Point2::new(pos.x + c * fx - s * fy, pos.y + s * fx + c * fy);
    [
        pos,
        at(params.front_length, hw),
        at(params.front_length, -hw),
        at(-params.rear_overhang, -hw),
        at(-params.rear_overhang, hw),
    ]
}

fn end_pose(seg: &QuinticSegment, x: f64) -> Pose2 {
    let s = sample_poly(&seg.coeffs, x);
    let p = world(&seg.frame, s.x, s.y);
    Pose2::new(p.x, p.y, seg.frame.heading + s.slope.atan())
}

impl Validator {
    /// Sample without midpoint refinement, matching the loss resolution.
    pub fn coarse() -> Self {
        Self { refine: false, ..Self::default() }
    }

    /// True when one segment stays inside `fs` with admissible curvature.
    pub fn segment_ok(&self, seg: &QuinticSegment, fs: &FreeSpace, params: &VehicleParams) -> bool {
        let mut v = Vec::new();
        self.check_segment(0, seg, fs, params, &mut v, true);
        v.is_empty()
    }

    fn check_segment(
        &self,
        si: usize,
        seg: &QuinticSegment,
        fs: &FreeSpace,
        params: &VehicleParams,
        violations: &mut Vec<Violation>,
        stop_early: bool,
    ) {
        if !seg.coeffs.iter().all(|c| c.is_finite()) || !seg.span.is_finite() || !seg.frame.is_finite() {
            violations.push(Violation::NonFinite { segment: si });
            return;
        }
        if seg.span <= 0.0 {
            violations.push(Violation::NonMonotonic { segment: si });
            return;
        }
        let n = self.samples.max(2);
        let steps = if self.refine { 2 * (n - 1) } else { n - 1 };
        for j in 0..=steps {
            let s = sample_poly(&seg.coeffs, seg.span * j as f64 / steps as f64);
            if s.kappa.abs() > params.kappa_max + self.kappa_tol || !s.kappa.is_finite() {
                violations.push(Violation::Curvature { segment: si, sample: j, kappa: s.kappa });
                if stop_early {
                    return;
                }
            }
            let heading = seg.frame.heading + s.slope.atan();
            for (k, p) in body_points(world(&seg.frame, s.x, s.y), heading, params).iter().enumerate() {
                if !inside(fs, *p, self.containment_tol) {
                    violations.push(Violation::Collision { segment: si, sample: j, point: k, at: [p.x, p.y] });
                    if stop_early {
                        return;
                    }
                }
            }
        }
    }

    pub fn validate(&self, path: &PathSpline, fs: &FreeSpace, q0: &Pose2, qd: &Pose2, params: &VehicleParams) -> ValidationReport {
        let mut violations = Vec::new();
        for (si, seg) in path.segments.iter().enumerate() {
            self.check_segment(si, seg, fs, params, &mut violations, false);
        }
        match (path.segments.first(), path.segments.last()) {
            (Some(first), Some(last)) => {
                for (name, got, want) in [("start", end_pose(first, 0.0), q0), ("goal", end_pose(last, last.span), qd)] {
                    let pe = got.position.dist(want.position);
                    let he = wrap_angle(got.heading - want.heading).abs();
                    if !(pe <= self.endpoint_tol && he <= self.endpoint_tol) {
                        violations.push(Violation::Endpoint { end: name.into(), position_error: pe, heading_error: he });
                    }
                }
                let start_in_goal = qd.to_local(world(&last.frame, 0.0, last.coeffs[0]));
                if !(start_in_goal.x < 0.0) {
                    violations.push(Violation::NonMonotonic { segment: path.segments.len() - 1 });
                }
            }
            _ => violations.push(Violation::NonMonotonic { segment: 0 }),
        }
        ValidationReport { accepted: violations.is_empty(), violations }
    }
}

/// Checks `path` against the task with the default validator.
pub fn validate_path(path: &PathSpline, fs: &FreeSpace, q0: &Pose2, qd: &Pose2, params: &VehicleParams) -> ValidationReport {
    Validator::default().validate(path, fs, q0, qd, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Quadrangle;
    use crate::spline::{assemble, GluingPoint};

    fn corridor() -> FreeSpace {
        FreeSpace::new(vec![Quadrangle::rect(-5.0, -3.0, 40.0, 3.0).unwrap()]).unwrap()
    }

    #[test]
    fn straight_path_accepted() {
        let (q0, qd) = (Pose2::new(0.0, 0.0, 0.0), Pose2::new(30.0, 0.0, 0.0));
        let gps: Vec<_> = (0..6).map(|_| GluingPoint::new(30.0 / 7.0, 0.0, 0.0, 0.0)).collect();
        let path = assemble(&q0, &gps, &qd).unwrap();
        let r = validate_path(&path, &corridor(), &q0, &qd, &VehicleParams::default());
        assert!(r.accepted, "{:?}", r.violations);
    }

    #[test]
    fn excursion_rejected_with_location() {
        let (q0, qd) = (Pose2::new(0.0, 0.0, 0.0), Pose2::new(30.0, 0.0, 0.0));
        let mut gps: Vec<_> = (0..6).map(|_| GluingPoint::new(30.0 / 7.0, 0.0, 0.0, 0.0)).collect();
        gps[2] = GluingPoint::new(30.0 / 7.0, 1.8, 0.0, 0.0);
        gps[3] = GluingPoint::new(30.0 / 7.0, -1.8, 0.0, 0.0);
        let path = assemble(&q0, &gps, &qd).unwrap();
        let r = validate_path(&path, &corridor(), &q0, &qd, &VehicleParams::default());
        assert!(!r.accepted);
        assert!(r.violations.iter().any(|v| matches!(v, Violation::Collision { segment: 2 | 3, .. })));
    }

    #[test]
    fn wrong_goal_rejected() {
        let (q0, qd) = (Pose2::new(0.0, 0.0, 0.0), Pose2::new(30.0, 0.0, 0.0));
        let gps: Vec<_> = (0..6).map(|_| GluingPoint::new(4.0, 0.0, 0.0, 0.0)).collect();
        let path = assemble(&q0, &gps, &qd).unwrap();
        let r = validate_path(&path, &corridor(), &q0, &Pose2::new(31.0, 0.0, 0.0), &VehicleParams::default());
        assert!(r.violations.iter().any(|v| matches!(v, Violation::Endpoint { .. })));
    }
}
