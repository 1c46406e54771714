//! Differentiable training losses computed on a sampled path.
//!
//! The total is
//! `sigma_coll * coll + curv + over + nbal + sigma_len * len`, where
//! `sigma_coll` is off during pretraining and `sigma_len` switches on only
//! when the path has no collision, curvature or overshoot violation.

use std::f64::consts::{FRAC_PI_2, TAU};

use serde::{Deserialize, Serialize};

use crate::autodiff::Real;
use crate::geometry::{FreeSpace, Point2, Pose2};
use crate::spline::{self, arc_length_r, FrameR, PathSpline, SampleR, SampledPath, SegmentR};
use crate::vehicle::{corner_offsets, VehicleParams};

/// Training phase selecting the collision gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Pretrain,
    Main,
}

/// Values of every loss component and the gates applied to them.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub coll: f64,
    pub curv: f64,
    pub over: f64,
    pub nbal: f64,
    pub len: f64,
    pub total: f64,
    pub sigma_coll: u8,
    pub sigma_len: u8,
}

impl LossBreakdown {
    pub fn violations(&self) -> f64 {
        self.coll + self.curv + self.over
    }

    pub fn is_feasible(&self) -> bool {
        self.violations() == 0.0
    }
}

/// Loss components before gating.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms<R> {
    pub coll: R,
    pub curv: R,
    pub over: R,
    pub nbal: R,
    pub len: R,
}

/// Sum over segments and sample gaps of the distances of the five
/// footprint points to the free space, weighted by the guiding-point step
/// to the next sample of the same segment.
pub fn collision_loss_r<R: Real>(samples: &[Vec<SampleR<R>>], fs: &FreeSpace, params: &VehicleParams) -> R {
    let c = corner_offsets(params);
    let offsets = [Point2::new(0.0, 0.0), c[0], c[1], c[2], c[3]];
    let mut acc: Option<R> = None;
    for seg in samples {
        for pair in seg.windows(2) {
            let (s, next) = (&pair[0], &pair[1]);
            let mut depth: Option<R> = None;
            let (x, y, c, sn) = (s.x.value(), s.y.value(), s.cos.value(), s.sin.value());
            for o in offsets {
                let p = Point2::new(x + c * o.x - sn * o.y, y + sn * o.x + c * o.y);
                let (d, [gx, gy]) = fs.distance_with_gradient(p);
                if d > 0.0 {
                    // Chain rule through the rigid placement of the point.
                    let d = s.x.custom(
                        d,
                        &[(s.x, gx), (s.y, gy), (s.cos, gx * o.x + gy * o.y), (s.sin, gy * o.x - gx * o.y)],
                    );
                    depth = Some(depth.map_or(d, |a| a + d));
                }
            }
            if let Some(depth) = depth {
                let gap = (next.x - s.x).hypot(next.y - s.y);
                let term = depth * gap;
                acc = Some(acc.map_or(term, |a| a + term));
            }
        }
    }
    acc.unwrap_or_else(|| zero_like(samples))
}

/// Sum of curvature excess over `kappa_max` at all but the last sample of
/// each segment.
pub fn curvature_loss_r<R: Real>(samples: &[Vec<SampleR<R>>], kappa_max: f64) -> R {
    let mut acc: Option<R> = None;
    for seg in samples {
        for s in &seg[..seg.len().saturating_sub(1)] {
            let excess = s.curvature.abs() - kappa_max;
            if excess.value() > 0.0 {
                acc = Some(acc.map_or(excess, |a| a + excess));
            }
        }
    }
    acc.unwrap_or_else(|| zero_like(samples))
}

fn zero_like<R: Real>(samples: &[Vec<SampleR<R>>]) -> R {
    samples.iter().flatten().next().map_or_else(|| panic!("empty sample set"), |s| s.x.lift(0.0))
}

/// Three overshoot penalties for the last gluing point `last` relative to
/// the goal: (i) `last` ahead of the goal along the goal heading, (ii) the
/// goal behind `last` along its heading, (iii) heading difference beyond a
/// quarter turn.
pub fn overshoot_loss_r<R: Real>(last: &FrameR<R>, qd: &Pose2) -> R {
    let zero = last.x.lift(0.0);
    let (s, c) = qd.heading.sin_cos();
    let dx = last.x - qd.x();
    let dy = last.y - qd.y();
    let ahead = (dx * c + dy * s).max(zero);
    let behind = (last.cos * dx + last.sin * dy).max(zero);
    let raw = last.x.lift(qd.heading) - last.heading;
    let dtheta = raw - TAU * (raw.value() / TAU).round();
    let turn = (dtheta.abs() - FRAC_PI_2).max(zero);
    ahead + behind + turn
}

pub fn nonbalanced_loss_r<R: Real>(lengths: &[R]) -> R {
    let zero = lengths[0].lift(0.0);
    let mean = lengths.iter().fold(zero, |a, &l| a + l) / lengths.len() as f64;
    lengths
        .iter()
        .fold(zero, |acc, &l| acc + (l - mean * 1.5).max(zero) + (mean - l * 1.5).max(zero))
}

pub fn length_loss_r<R: Real>(lengths: &[R]) -> R {
    lengths.iter().skip(1).fold(lengths[0], |a, &l| a + l)
}

/// Applies the gates and returns the differentiable total and the values.
pub fn total_loss_r<R: Real>(terms: &LossTerms<R>, phase: Phase) -> (R, LossBreakdown) {
    let sigma_coll = u8::from(phase == Phase::Main);
    let violations = terms.coll.value() + terms.curv.value() + terms.over.value();
    let sigma_len = u8::from(violations == 0.0);
    let mut total = terms.curv + terms.over + terms.nbal;
    if sigma_coll == 1 {
        total = total + terms.coll;
    }
    if sigma_len == 1 {
        total = total + terms.len;
    }
    let breakdown = LossBreakdown {
        coll: terms.coll.value(),
        curv: terms.curv.value(),
        over: terms.over.value(),
        nbal: terms.nbal.value(),
        len: terms.len.value(),
        total: total.value(),
        sigma_coll,
        sigma_len,
    };
    (total, breakdown)
}

/// All loss terms of a chain of segments whose last gluing point is
/// `last`.
pub fn path_terms_r<R: Real>(
    segments: &[SegmentR<R>],
    last: &FrameR<R>,
    qd: &Pose2,
    fs: &FreeSpace,
    params: &VehicleParams,
) -> LossTerms<R> {
    let samples: Vec<Vec<SampleR<R>>> = segments
        .iter()
        .map(|s| spline::sample_segment_r(s, spline::SAMPLES_PER_SEGMENT))
        .collect();
    let lengths: Vec<R> = segments.iter().map(|s| arc_length_r(&s.coeffs, s.span)).collect();
    LossTerms {
        coll: collision_loss_r(&samples, fs, params),
        curv: curvature_loss_r(&samples, params.kappa_max),
        over: overshoot_loss_r(last, qd),
        nbal: nonbalanced_loss_r(&lengths),
        len: length_loss_r(&lengths),
    }
}

fn plain_samples(sampled: &SampledPath) -> Vec<Vec<SampleR<f64>>> {
    sampled
        .segments
        .iter()
        .map(|seg| {
            seg.iter()
                .map(|s| SampleR {
                    x: s.position.x,
                    y: s.position.y,
                    cos: s.heading.cos(),
                    sin: s.heading.sin(),
                    curvature: s.curvature,
                })
                .collect()
        })
        .collect()
}

pub fn collision_loss(sampled: &SampledPath, fs: &FreeSpace, params: &VehicleParams) -> f64 {
    collision_loss_r(&plain_samples(sampled), fs, params)
}

pub fn curvature_loss(sampled: &SampledPath, kappa_max: f64) -> f64 {
    curvature_loss_r(&plain_samples(sampled), kappa_max)
}

pub fn overshoot_loss(last_gp_world: &Pose2, qd: &Pose2) -> f64 {
    overshoot_loss_r(&FrameR::from_pose(0.0, last_gp_world), qd)
}

pub fn nonbalanced_loss(lengths: &[f64]) -> f64 {
    nonbalanced_loss_r(lengths)
}

pub fn length_loss(lengths: &[f64]) -> f64 {
    length_loss_r(lengths)
}

pub fn total_loss(terms: &LossTerms<f64>, phase: Phase) -> LossBreakdown {
    total_loss_r(terms, phase).1
}

/// Loss breakdown of an assembled path.
pub fn evaluate_path(path: &PathSpline, fs: &FreeSpace, params: &VehicleParams, phase: Phase) -> LossBreakdown {
    let sampled = spline::sample(path);
    let lengths = path.lengths();
    let terms = LossTerms {
        coll: collision_loss(&sampled, fs, params),
        curv: curvature_loss(&sampled, params.kappa_max),
        over: overshoot_loss(&path.last_gluing_pose(), &path.qd),
        nbal: nonbalanced_loss(&lengths),
        len: length_loss(&lengths),
    };
    total_loss(&terms, phase)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Quadrangle;
    use crate::spline::{assemble, sample, GluingPoint, PathSample};

    fn straight(len: f64) -> PathSpline {
        let d = len / 7.0;
        let gps = vec![GluingPoint::new(d, 0.0, 0.0, 0.0); 6];
        assemble(&Pose2::new(0.0, 0.0, 0.0), &gps, &Pose2::new(len, 0.0, 0.0)).unwrap()
    }

    fn open_space() -> FreeSpace {
        FreeSpace::new(vec![Quadrangle::rect(-10.0, -10.0, 50.0, 10.0).unwrap()]).unwrap()
    }

    fn arc_samples(kappa: f64) -> SampledPath {
        let seg = (0..128)
            .map(|j| PathSample {
                position: crate::geometry::Point2::new(j as f64 * 0.1, 0.0),
                heading: 0.0,
                curvature: kappa,
                local_x: j as f64 * 0.1,
            })
            .collect();
        SampledPath { segments: vec![seg] }
    }

    #[test]
    fn inside_free_space_is_collision_free() {
        let p = VehicleParams::default();
        assert_eq!(collision_loss(&sample(&straight(35.0)), &open_space(), &p), 0.0);
    }

    #[test]
    fn narrow_corridor_collides() {
        let p = VehicleParams::default();
        let fs = FreeSpace::new(vec![Quadrangle::rect(-10.0, -0.5, 50.0, 0.5).unwrap()]).unwrap();
        assert!(collision_loss(&sample(&straight(35.0)), &fs, &p) > 0.0);
    }

    #[test]
    fn curvature_examples() {
        assert_eq!(curvature_loss(&sample(&straight(35.0)), 0.22), 0.0);
        assert_eq!(curvature_loss(&arc_samples(0.22), 0.22), 0.0);
        assert!((curvature_loss(&arc_samples(-0.32), 0.22) - 12.7).abs() < 1e-9);
    }

    #[test]
    fn overshoot_examples() {
        let qd = Pose2::new(10.0, 0.0, 0.0);
        assert_eq!(overshoot_loss(&Pose2::new(9.0, 0.0, 0.0), &qd), 0.0);
        assert!((overshoot_loss(&Pose2::new(12.0, 0.0, 0.0), &qd) - 4.0).abs() < 1e-12);
        let turn = 2.0 * std::f64::consts::PI / 3.0;
        let got = overshoot_loss(&Pose2::new(10.0, 0.0, turn), &qd);
        assert!((got - std::f64::consts::PI / 6.0).abs() < 1e-12);
    }

    #[test]
    fn nonbalanced_examples() {
        assert_eq!(nonbalanced_loss(&[2.0; 7]), 0.0);
        let l = [1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 10.0];
        // mean 16/7: the long segment contributes 10 - 24/7 = 46/7 and each
        // short one 16/7 - 3/2 = 11/14.
        let want = 46.0 / 7.0 + 6.0 * 11.0 / 14.0;
        assert!((nonbalanced_loss(&l) - want).abs() < 1e-12);
        assert!((want - 79.0 / 7.0).abs() < 1e-12);
        let scaled: Vec<f64> = l.iter().map(|v| v * 3.5).collect();
        assert!((nonbalanced_loss(&scaled) - 3.5 * want).abs() < 1e-12);
    }

    #[test]
    fn length_examples() {
        assert_eq!(length_loss(&[1.0; 7]), 7.0);
        assert!((length_loss(&straight(35.0).lengths()) - 35.0).abs() < 1e-9);
    }

    #[test]
    fn gating() {
        let feasible = LossTerms { coll: 0.0, curv: 0.0, over: 0.0, nbal: 0.5, len: 30.0 };
        let b = total_loss(&feasible, Phase::Main);
        assert_eq!((b.sigma_len, b.total), (1, 30.5));
        let colliding = LossTerms { coll: 2.0, curv: 0.1, over: 0.0, nbal: 0.5, len: 30.0 };
        let b = total_loss(&colliding, Phase::Main);
        assert_eq!(b.sigma_len, 0);
        assert!((b.total - 2.6).abs() < 1e-12);
        let b = total_loss(&colliding, Phase::Pretrain);
        assert_eq!(b.sigma_coll, 0);
        assert!((b.total - 0.6).abs() < 1e-12);
    }
}
