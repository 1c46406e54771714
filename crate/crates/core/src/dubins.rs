//! Shortest forward-only paths with bounded curvature.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::geometry::{FreeSpace, Pose2};
use crate::vehicle::{footprint, VehicleParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum DubinsWord {
    Lsl,
    Rsr,
    Lsr,
    Rsl,
    Rlr,
    Lrl,
}

impl DubinsWord {
    pub const ALL: [DubinsWord; 6] =
        [DubinsWord::Lsl, DubinsWord::Rsr, DubinsWord::Lsr, DubinsWord::Rsl, DubinsWord::Rlr, DubinsWord::Lrl];

    /// Turn direction per segment: +1 left, -1 right, 0 straight.
    pub fn turns(self) -> [i8; 3] {
        match self {
            DubinsWord::Lsl => [1, 0, 1],
            DubinsWord::Rsr => [-1, 0, -1],
            DubinsWord::Lsr => [1, 0, -1],
            DubinsWord::Rsl => [-1, 0, 1],
            DubinsWord::Rlr => [-1, 1, -1],
            DubinsWord::Lrl => [1, -1, 1],
        }
    }
}

impl std::fmt::Display for DubinsWord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            DubinsWord::Lsl => "LSL",
            DubinsWord::Rsr => "RSR",
            DubinsWord::Lsr => "LSR",
            DubinsWord::Rsl => "RSL",
            DubinsWord::Rlr => "RLR",
            DubinsWord::Lrl => "LRL",
        };
        f.write_str(s)
    }
}

fn mod2pi(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// A Dubins path: start pose, turning radius, word and the three segment
/// lengths normalized by the radius.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DubinsPath {
    pub start: Pose2,
    pub radius: f64,
    pub word: DubinsWord,
    pub params: [f64; 3],
}

impl DubinsPath {
    pub fn length(&self) -> f64 {
        self.params.iter().sum::<f64>() * self.radius
    }

    /// Pose after arc length `s` (clamped to the path).
    pub fn sample(&self, s: f64) -> Pose2 {
        let mut t = (s / self.radius).clamp(0.0, self.params.iter().sum());
        let (mut x, mut y, mut th) = (0.0, 0.0, self.start.heading);
        for (turn, &len) in self.word.turns().iter().zip(&self.params) {
            let step = t.min(len);
            match turn {
                0 => {
                    x += th.cos() * step;
                    y += th.sin() * step;
                }
                1 => {
                    x += (th + step).sin() - th.sin();
                    y += th.cos() - (th + step).cos();
                    th += step;
                }
                _ => {
                    x += th.sin() - (th - step).sin();
                    y += (th - step).cos() - th.cos();
                    th -= step;
                }
            }
            t -= step;
            if t <= 0.0 {
                break;
            }
        }
        Pose2::new(self.start.x() + x * self.radius, self.start.y() + y * self.radius, th)
    }

    /// Signed curvature at arc length `s`; on a segment boundary the later
    /// segment wins.
    pub fn curvature_at(&self, s: f64) -> f64 {
        let mut t = s / self.radius;
        for (turn, &len) in self.word.turns().iter().zip(&self.params) {
            if t < len {
                return f64::from(*turn) / self.radius;
            }
            t -= len;
        }
        0.0
    }

    /// Poses every `step` meters of arc length, always including both ends.
    pub fn sample_every(&self, step: f64) -> impl Iterator<Item = Pose2> + '_ {
        let len = self.length();
        let n = (len / step).ceil().max(1.0) as usize;
        (0..=n).map(move |i| self.sample(len * i as f64 / n as f64))
    }
}

fn word_params(word: DubinsWord, d: f64, a: f64, b: f64) -> Option<[f64; 3]> {
    let (sa, ca, sb, cb) = (a.sin(), a.cos(), b.sin(), b.cos());
    let c_ab = (a - b).cos();
    match word {
        DubinsWord::Lsl => {
            let p2 = 2.0 + d * d - 2.0 * c_ab + 2.0 * d * (sa - sb);
            (p2 >= 0.0).then(|| {
                let t1 = (cb - ca).atan2(d + sa - sb);
                [mod2pi(t1 - a), p2.sqrt(), mod2pi(b - t1)]
            })
        }
        DubinsWord::Rsr => {
            let p2 = 2.0 + d * d - 2.0 * c_ab + 2.0 * d * (sb - sa);
            (p2 >= 0.0).then(|| {
                let t1 = (ca - cb).atan2(d - sa + sb);
                [mod2pi(a - t1), p2.sqrt(), mod2pi(t1 - b)]
            })
        }
        DubinsWord::Lsr => {
            let p2 = -2.0 + d * d + 2.0 * c_ab + 2.0 * d * (sa + sb);
            (p2 >= 0.0).then(|| {
                let p = p2.sqrt();
                let t0 = (-ca - cb).atan2(d + sa + sb) - (-2.0f64).atan2(p);
                [mod2pi(t0 - a), p, mod2pi(t0 - b)]
            })
        }
        DubinsWord::Rsl => {
            let p2 = -2.0 + d * d + 2.0 * c_ab - 2.0 * d * (sa + sb);
            (p2 >= 0.0).then(|| {
                let p = p2.sqrt();
                let t0 = (ca + cb).atan2(d - sa - sb) - 2.0f64.atan2(p);
                [mod2pi(a - t0), p, mod2pi(b - t0)]
            })
        }
        DubinsWord::Rlr => {
            let c = (6.0 - d * d + 2.0 * c_ab + 2.0 * d * (sa - sb)) / 8.0;
            (c.abs() <= 1.0).then(|| {
                let phi = (ca - cb).atan2(d - sa + sb);
                let p = mod2pi(TAU - c.acos());
                let t = mod2pi(a - phi + p / 2.0);
                [t, p, mod2pi(a - b - t + p)]
            })
        }
        DubinsWord::Lrl => {
            let c = (6.0 - d * d + 2.0 * c_ab + 2.0 * d * (sb - sa)) / 8.0;
            (c.abs() <= 1.0).then(|| {
                let phi = (ca - cb).atan2(d + sa - sb);
                let p = mod2pi(TAU - c.acos());
                let t = mod2pi(-a - phi + p / 2.0);
                [t, p, mod2pi(b - a - t + p)]
            })
        }
    }
}

/// Every valid word connecting `q0` to `qd`, shortest first.
pub fn dubins_all(q0: &Pose2, qd: &Pose2, radius: f64) -> Vec<DubinsPath> {
    assert!(radius > 0.0, "turning radius must be positive");
    let (dx, dy) = (qd.x() - q0.x(), qd.y() - q0.y());
    let d = dx.hypot(dy) / radius;
    let theta = if d > 0.0 { dy.atan2(dx) } else { 0.0 };
    let a = mod2pi(q0.heading - theta);
    let b = mod2pi(qd.heading - theta);
    let mut paths: Vec<DubinsPath> = DubinsWord::ALL
        .iter()
        .filter_map(|&w| word_params(w, d, a, b).map(|params| DubinsPath { start: *q0, radius, word: w, params }))
        .collect();
    paths.sort_by(|p, q| p.length().total_cmp(&q.length()));
    paths
}

/// Shortest word and its length.
pub fn dubins_shortest(q0: &Pose2, qd: &Pose2, radius: f64) -> (DubinsWord, f64) {
    let best = dubins_all(q0, qd, radius)[0];
    (best.word, best.length())
}

fn pose_free(p: &Pose2, fs: &FreeSpace, params: &VehicleParams) -> bool {
    footprint(p, params).points.iter().all(|&c| fs.contains(c))
}

/// True when some word from `a` to `b` keeps the footprint in `fs`.
fn connect_free(a: &Pose2, b: &Pose2, fs: &FreeSpace, params: &VehicleParams, resolution: f64) -> bool {
    dubins_all(a, b, params.min_turn_radius())
        .iter()
        .any(|p| p.sample_every(resolution).all(|q| pose_free(&q, fs, params)))
}

/// Grid-search feasibility gate: a direct Dubins word, or two words joined
/// at one via pose on a `resolution` x `resolution` x 30 degree grid.
pub fn dubins_feasible(q0: &Pose2, qd: &Pose2, fs: &FreeSpace, params: &VehicleParams, resolution: f64) -> bool {
    if !(pose_free(q0, fs, params) && pose_free(qd, fs, params)) {
        return false;
    }
    if connect_free(q0, qd, fs, params, resolution) {
        return true;
    }
    let radius = params.min_turn_radius();
    let inflated = VehicleParams {
        width: params.width + 1.0,
        rear_overhang: params.rear_overhang + 0.5,
        front_length: params.front_length + 0.5,
        ..*params
    };
    let (lo, hi) = fs.bounding_box();
    let nx = ((hi.x - lo.x) / resolution).floor() as usize;
    let ny = ((hi.y - lo.y) / resolution).floor() as usize;
    let mut vias = Vec::new();
    for i in 0..=nx {
        for j in 0..=ny {
            for k in 0..12 {
                let via = Pose2::new(
                    lo.x + i as f64 * resolution,
                    lo.y + j as f64 * resolution,
                    -PI + k as f64 * PI / 6.0,
                );
                if pose_free(&via, fs, params) {
                    let cost = dubins_all(q0, &via, radius)[0].length() + dubins_all(&via, qd, radius)[0].length();
                    let tight = !pose_free(&via, fs, &inflated);
                    vias.push((tight, cost, via));
                }
            }
        }
    }
    // Every free via is tried; roomy ones first since they succeed far more
    // often, then by total Dubins length.
    vias.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    vias.iter().any(|(_, _, via)| {
        connect_free(q0, via, fs, params, resolution) && connect_free(via, qd, fs, params, resolution)
    })
}
