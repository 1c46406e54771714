//! Car model: kinematic bicycle, rectangular body and the five points the
//! collision loss checks.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::autodiff::Real;
use crate::geometry::{Point2, Pose2};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum VehicleError {
    #[error("steering angle {0} rad hits the tangent singularity")]
    Singular(f64),
    #[error("steering angle {steering} rad exceeds the limit {limit} rad")]
    SteeringLimit { steering: f64, limit: f64 },
    #[error("vehicle parameter `{0}` must be positive and finite")]
    InvalidParam(&'static str),
}

/// Physical dimensions and the curvature bound. Defaults describe a
/// mid-size passenger car.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VehicleParams {
    /// Distance between the axles. Only used by the kinematic model and for
    /// steering-angle reporting; planning is bounded by `kappa_max`.
    pub wheelbase: f64,
    pub width: f64,
    /// Rear axle to rear bumper.
    pub rear_overhang: f64,
    /// Rear axle to front bumper.
    pub front_length: f64,
    pub kappa_max: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self { wheelbase: 2.7, width: 1.72, rear_overhang: 0.67, front_length: 3.375, kappa_max: 0.22 }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<(), VehicleError> {
        let fields = [
            ("wheelbase", self.wheelbase),
            ("width", self.width),
            ("rear_overhang", self.rear_overhang),
            ("front_length", self.front_length),
            ("kappa_max", self.kappa_max),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(VehicleError::InvalidParam(name));
            }
        }
        Ok(())
    }

    /// Builds parameters from a steering limit instead of a curvature bound.
    pub fn with_steering_max(mut self, steering_max: f64) -> Self {
        self.kappa_max = steering_max.tan() / self.wheelbase;
        self
    }

    pub fn steering_max(&self) -> f64 {
        (self.kappa_max * self.wheelbase).atan()
    }

    pub fn min_turn_radius(&self) -> f64 {
        1.0 / self.kappa_max
    }

    pub fn body_length(&self) -> f64 {
        self.rear_overhang + self.front_length
    }

    pub fn curvature(&self, steering: f64) -> f64 {
        steering.tan() / self.wheelbase
    }

    pub fn steering_for_curvature(&self, kappa: f64) -> f64 {
        (kappa * self.wheelbase).atan()
    }
}

/// `[steering, heading, x, y]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleState {
    pub steering: f64,
    pub heading: f64,
    pub x: f64,
    pub y: f64,
}

impl VehicleState {
    pub fn new(steering: f64, heading: f64, x: f64, y: f64) -> Self {
        Self { steering, heading, x, y }
    }

    pub fn from_pose(pose: &Pose2) -> Self {
        Self::new(0.0, pose.heading, pose.x(), pose.y())
    }

    pub fn pose(&self) -> Pose2 {
        Pose2::new(self.x, self.y, self.heading)
    }
}

/// State derivative `[d steering, d heading, dx, dy]` for steering rate
/// `steering_rate` and speed `speed`.
pub fn kinematics(
    state: &VehicleState,
    steering_rate: f64,
    speed: f64,
    params: &VehicleParams,
) -> Result<[f64; 4], VehicleError> {
    let b = state.steering;
    if (b.abs() - FRAC_PI_2).abs() < 1e-12 || b.abs() > FRAC_PI_2 {
        return Err(VehicleError::Singular(b));
    }
    let limit = params.steering_max();
    if b.abs() >= limit {
        return Err(VehicleError::SteeringLimit { steering: b, limit });
    }
    let (s, c) = state.heading.sin_cos();
    Ok([steering_rate, speed * b.tan() / params.wheelbase, speed * c, speed * s])
}

/// Guiding point followed by the body corners, clockwise from front-left.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Footprint {
    pub points: [Point2; 5],
}

impl Footprint {
    pub fn guiding_point(&self) -> Point2 {
        self.points[0]
    }

    pub fn corners(&self) -> &[Point2] {
        &self.points[1..]
    }
}

/// Body corners in the vehicle frame, clockwise from front-left.
pub fn corner_offsets(params: &VehicleParams) -> [Point2; 4] {
    let hw = 0.5 * params.width;
    [
        Point2::new(params.front_length, hw),
        Point2::new(params.front_length, -hw),
        Point2::new(-params.rear_overhang, -hw),
        Point2::new(-params.rear_overhang, hw),
    ]
}

pub fn footprint(pose: &Pose2, params: &VehicleParams) -> Footprint {
    let c = corner_offsets(params);
    Footprint {
        points: [
            pose.position,
            pose.to_world(c[0]),
            pose.to_world(c[1]),
            pose.to_world(c[2]),
            pose.to_world(c[3]),
        ],
    }
}

/// Differentiable footprint for a guiding point `(x, y)` and heading given
/// by its cosine and sine.
pub fn footprint_r<R: Real>(x: R, y: R, cos: R, sin: R, params: &VehicleParams) -> [(R, R); 5] {
    let c = corner_offsets(params);
    let corner = |o: Point2| (x + cos * o.x - sin * o.y, y + sin * o.x + cos * o.y);
    [(x, y), corner(c[0]), corner(c[1]), corner(c[2]), corner(c[3])]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Rigid2;
    use proptest::prelude::*;

    #[test]
    fn straight_motion() {
        let p = VehicleParams::default();
        let d = kinematics(&VehicleState::new(0.0, 0.0, 0.0, 0.0), 0.0, 1.0, &p).unwrap();
        assert_eq!(d, [0.0, 0.0, 1.0, 0.0]);
        let d = kinematics(&VehicleState::new(0.0, FRAC_PI_2, 0.0, 0.0), 0.0, 2.0, &p).unwrap();
        assert!(d[0] == 0.0 && d[1] == 0.0 && d[2].abs() < 1e-15 && (d[3] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn yaw_rate_follows_steering() {
        let p = VehicleParams::default();
        let b = (p.wheelbase * 0.2).atan();
        let d = kinematics(&VehicleState::new(b, 0.3, 0.0, 0.0), 0.0, 1.0, &p).unwrap();
        assert!((d[1] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn singular_and_limit_rejected() {
        let p = VehicleParams::default();
        assert!(matches!(
            kinematics(&VehicleState::new(FRAC_PI_2, 0.0, 0.0, 0.0), 0.0, 1.0, &p),
            Err(VehicleError::Singular(_))
        ));
        let over = p.steering_max() + 0.01;
        assert!(matches!(
            kinematics(&VehicleState::new(over, 0.0, 0.0, 0.0), 0.0, 1.0, &p),
            Err(VehicleError::SteeringLimit { .. })
        ));
    }

    #[test]
    fn footprint_at_origin() {
        let f = footprint(&Pose2::new(0.0, 0.0, 0.0), &VehicleParams::default());
        let want = [(3.375, 0.86), (3.375, -0.86), (-0.67, -0.86), (-0.67, 0.86)];
        for (c, w) in f.corners().iter().zip(want) {
            assert!((c.x - w.0).abs() < 1e-12 && (c.y - w.1).abs() < 1e-12);
        }
        assert_eq!(f.guiding_point(), Point2::new(0.0, 0.0));
    }

    #[test]
    fn footprint_rotated_quarter_turn() {
        let p = VehicleParams::default();
        let f0 = footprint(&Pose2::new(0.0, 0.0, 0.0), &p);
        let f1 = footprint(&Pose2::new(0.0, 0.0, FRAC_PI_2), &p);
        let r = Rigid2::new(FRAC_PI_2, 0.0, 0.0);
        for (a, b) in f0.points.iter().zip(f1.points.iter()) {
            assert!(r.point(*a).dist(*b) < 1e-12);
        }
    }

    #[test]
    fn params_json_defaults() {
        let p: VehicleParams = serde_json::from_str(r#"{"width": 2.0}"#).unwrap();
        assert_eq!(p.width, 2.0);
        assert_eq!(p.kappa_max, 0.22);
        assert!(serde_json::from_str::<VehicleParams>(r#"{"wheel_base": 2.0}"#).is_err());
        let bad = VehicleParams { width: -1.0, ..Default::default() };
        assert_eq!(bad.validate(), Err(VehicleError::InvalidParam("width")));
    }

    #[test]
    fn steering_curvature_consistency() {
        let p = VehicleParams::default();
        assert!((p.curvature(p.steering_max()) - p.kappa_max).abs() < 1e-12);
        let q = p.with_steering_max(0.5);
        assert!((q.curvature(0.5) - q.kappa_max).abs() < 1e-12);
        let mut last = f64::NEG_INFINITY;
        for i in -99..100 {
            let k = p.curvature(i as f64 * 0.0157);
            assert!(k > last);
            last = k;
        }
    }

    proptest! {
        #[test]
        fn footprint_equivariant(x in -50.0..50.0f64, y in -50.0..50.0f64, h in -3.2..3.2f64,
                                 ang in -3.2..3.2f64, tx in -50.0..50.0f64, ty in -50.0..50.0f64) {
            let p = VehicleParams::default();
            let pose = Pose2::new(x, y, h);
            let r = Rigid2::new(ang, tx, ty);
            let a = footprint(&r.pose(&pose), &p);
            let b = footprint(&pose, &p);
            for (u, v) in a.points.iter().zip(b.points.iter()) {
                prop_assert!(u.dist(r.point(*v)) < 1e-9);
            }
            let diag = (p.width.powi(2) + p.body_length().powi(2)).sqrt();
            prop_assert!((b.points[1].dist(b.points[3]) - diag).abs() < 1e-9);
            prop_assert!((b.points[2].dist(b.points[4]) - diag).abs() < 1e-9);
        }
    }
}
