//! Numerical self-checks shared by the `selftest` command and the
//! acceptance suite: gradients against central differences, spline
//! continuity, invariances and loss/validator agreement.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Real, Tape};
use crate::geometry::{FreeSpace, Point2, Pose2, Quadrangle, Rigid2};
use crate::loss::{collision_loss, evaluate_path, path_terms_r, total_loss_r, LossTerms, Phase};
use crate::network::{encode_map, rollout_r, PlannerModel};
use crate::spline::{assemble, junction_gaps, sample, Chain, GluingPoint, GluingPointR};
use crate::task::TaskInput;
use crate::validate::Validator;
use crate::vehicle::{footprint, VehicleParams};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-6;
/// Denominator floor of the relative error, so that vanishing derivatives
/// are compared in absolute terms.
pub const REL_FLOOR: f64 = 1e-3;
/// Wide step used to tell smooth points from kinks inside the stencil.
const KINK_PROBE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub name: String,
    pub cases: usize,
    pub failures: usize,
    /// Largest observed error in the suite's own metric.
    pub worst: f64,
    pub tolerance: f64,
    /// Random cases discarded because a kink of the loss fell inside the
    /// difference stencil.
    #[serde(default)]
    pub skipped: usize,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.failures == 0 && self.cases > 0
    }

    fn from_errors(name: &str, errors: &[f64], tolerance: f64) -> Self {
        Self {
            name: name.into(),
            cases: errors.len(),
            failures: errors.iter().filter(|&&e| !(e <= tolerance)).count(),
            worst: errors.iter().copied().fold(0.0, f64::max),
            tolerance,
            skipped: 0,
        }
    }
}

impl std::fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {}: {} cases, {} failures, worst {:.3e} (tolerance {:.1e})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.cases,
            self.failures,
            self.worst,
            self.tolerance
        )?;
        if self.skipped > 0 {
            write!(f, ", {} non-smooth cases skipped", self.skipped)?;
        }
        Ok(())
    }
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Which scalar of the loss a gradient case checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Coll,
    Curv,
    Over,
    Nbal,
    Len,
    Total,
}

impl Component {
    pub const ALL: [Component; 6] =
        [Component::Coll, Component::Curv, Component::Over, Component::Nbal, Component::Len, Component::Total];

    fn pick<R: Real>(self, t: &LossTerms<R>) -> R {
        match self {
            Component::Coll => t.coll,
            Component::Curv => t.curv,
            Component::Over => t.over,
            Component::Nbal => t.nbal,
            Component::Len => t.len,
            Component::Total => total_loss_r(t, Phase::Main).0,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Component::Coll => "coll",
            Component::Curv => "curv",
            Component::Over => "over",
            Component::Nbal => "nbal",
            Component::Len => "len",
            Component::Total => "total",
        }
    }
}

/// A chain of six gluing points with a goal and free space, shaped so that
/// the component under test is active.
#[derive(Debug, Clone)]
pub struct GradientCase {
    pub q0: Pose2,
    pub gps: Vec<GluingPoint>,
    pub qd: Pose2,
    pub fs: FreeSpace,
}

fn last_frame(q0: &Pose2, gps: &[GluingPoint]) -> Option<Pose2> {
    let mut chain = Chain::start(0.0, q0);
    for gp in gps {
        chain.push(&GluingPointR::from_plain(gp)).ok()?;
    }
    Some(chain.frame.pose())
}

pub fn gradient_case(component: Component, rng: &mut ChaCha8Rng) -> GradientCase {
    let q0 = Pose2::new(rng.gen_range(-2.0..2.0), rng.gen_range(-1.0..1.0), rng.gen_range(-0.3..0.3));
    let (xs, ys, dys, ddys) = match component {
        Component::Nbal => ((1.0, 10.0), 0.5, 0.2, 0.03),
        Component::Curv => ((3.0, 6.0), 0.8, 0.3, 0.4),
        _ => ((3.0, 6.0), 0.8, 0.25, 0.04),
    };
    let gps: Vec<GluingPoint> = (0..6)
        .map(|_| {
            GluingPoint::new(
                rng.gen_range(xs.0..xs.1),
                rng.gen_range(-ys..ys),
                rng.gen_range(-dys..dys),
                rng.gen_range(-ddys..ddys),
            )
        })
        .collect();
    let last = last_frame(&q0, &gps).expect("spans above the minimum are solvable");
    let goal_local = if component == Component::Over {
        Pose2::new(rng.gen_range(-3.0..-0.5), rng.gen_range(-1.0..1.0), rng.gen_range(-0.3..0.3))
    } else {
        Pose2::new(rng.gen_range(4.0..7.0), rng.gen_range(-0.5..0.5), rng.gen_range(-0.2..0.2))
    };
    let qd = last.compose(&goal_local);
    let half = match component {
        Component::Coll | Component::Total => rng.gen_range(0.9..1.6),
        _ => 6.0,
    };
    let frame = Rigid2::new(q0.heading, q0.x(), q0.y());
    let fs = frame.free_space(&FreeSpace::new(vec![Quadrangle::rect(-4.0, -half, 80.0, half).unwrap()]).unwrap());
    GradientCase { q0, gps, qd, fs }
}

fn case_terms<R: Real>(ctx: R, case: &GradientCase, gps: &[GluingPointR<R>], params: &VehicleParams) -> LossTerms<R> {
    let mut chain = Chain::start(ctx, &case.q0);
    for gp in gps {
        chain.push(gp).expect("perturbed gluing points stay solvable");
    }
    let last = chain.frame;
    // An unreachable goal leaves the chain open, as in a rollout.
    let _ = chain.close(&case.qd);
    path_terms_r(&chain.segments, &last, &case.qd, &case.fs, params)
}

fn flat(gps: &[GluingPoint]) -> Vec<f64> {
    gps.iter().flat_map(|g| [g.x, g.y, g.dy, g.ddy]).collect()
}

fn unflat<R: Copy>(v: &[R]) -> Vec<GluingPointR<R>> {
    v.chunks(4).map(|c| GluingPointR { x: c[0], y: c[1], dy: c[2], ddy: c[3] }).collect()
}

fn unit_direction(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / norm).collect()
}

/// Reverse-mode and central-difference directional derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub ad: f64,
    pub fd: f64,
    pub value: f64,
    /// False when the loss has a kink within the difference stencil.
    pub smooth: bool,
}

impl GradCheck {
    pub fn error(&self) -> f64 {
        relative_error(self.ad, self.fd)
    }
}

/// Central difference of `f` along its argument plus a smoothness verdict.
///
/// Two probes flag a kink of slope jump `J` at offset `t` inside the
/// stencil. For a C2 function the second difference at step `h` is
/// `(h / H)^2` times the one at a wider step `H`, whereas a kink makes it
/// `J (h - |t|)`, which catches kinks near the center. The central
/// differences at `h` and `h / 2` then differ by `J |t| / (2h)`, which
/// catches kinks near the stencil's edge.
fn central_difference(f: impl Fn(f64) -> f64, f0: f64) -> (f64, bool) {
    let (fp, fm) = (f(FD_STEP), f(-FD_STEP));
    let d = (fp - fm) / (2.0 * FD_STEP);
    let d_half = (f(FD_STEP / 2.0) - f(-FD_STEP / 2.0)) / FD_STEP;
    let noise = 1e-15 * (1.0 + f0.abs()) / FD_STEP;
    let second_small = (fp - 2.0 * f0 + fm).abs();
    let second_wide = (f(KINK_PROBE) - 2.0 * f0 + f(-KINK_PROBE)).abs();
    let ratio = FD_STEP / KINK_PROBE;
    let curvature_ok = second_small <= 10.0 * ratio * ratio * second_wide + 1e-13 * (1.0 + f0.abs());
    let richardson_ok = (d - d_half).abs() <= 1e-5 * d.abs().max(REL_FLOOR) + noise;
    (d, curvature_ok && richardson_ok)
}

/// Directional derivative of one loss component with respect to the
/// gluing points.
pub fn component_gradient_check(
    component: Component,
    case: &GradientCase,
    direction: &[f64],
    params: &VehicleParams,
) -> GradCheck {
    let x = flat(&case.gps);
    let tape = Tape::new();
    let ctx = tape.constant(0.0);
    let vars: Vec<_> = x.iter().map(|&v| tape.var(v)).collect();
    let root = component.pick(&case_terms(ctx, case, &unflat(&vars), params));
    let grads = tape.backward(root).expect("finite loss");
    let ad: f64 = vars.iter().zip(direction).map(|(&v, d)| grads.wrt(v) * d).sum();
    let at = |s: f64| {
        let shifted: Vec<f64> = x.iter().zip(direction).map(|(a, d)| a + s * d).collect();
        component.pick(&case_terms(0.0, case, &unflat(&shifted), params))
    };
    let (fd, smooth) = central_difference(at, root.value());
    GradCheck { ad, fd, value: root.value(), smooth }
}

/// Directional derivative of the full rollout loss with respect to the
/// network weights; `None` when the rollout cannot be built.
pub fn rollout_gradient_check(model: &PlannerModel, task: &TaskInput, direction: &[f64], params: &VehicleParams) -> Option<GradCheck> {
    let loss_at = |m: &PlannerModel| -> Option<f64> {
        let r = rollout_r(0.0, task, m).ok()?;
        let terms = path_terms_r(&r.chain.segments, &r.last_frame, &task.qd, &task.fs, params);
        Some(total_loss_r(&terms, Phase::Main).0)
    };
    let tape = Tape::new();
    let ctx = tape.constant(0.0);
    let r = rollout_r(ctx, task, model).ok()?;
    let terms = path_terms_r(&r.chain.segments, &r.last_frame, &task.qd, &task.fs, params);
    let (root, _) = total_loss_r(&terms, Phase::Main);
    let grads = tape.backward_with_params(root, &model.params).ok()?;
    let ad: f64 = grads.params().iter().zip(direction).map(|(g, d)| g * d).sum();
    let shifted = |s: f64| PlannerModel::from_params(model.params.iter().zip(direction).map(|(p, d)| p + s * d).collect());
    for s in [FD_STEP, -FD_STEP, FD_STEP / 2.0, -FD_STEP / 2.0, KINK_PROBE, -KINK_PROBE] {
        loss_at(&shifted(s))?;
    }
    let value = root.value();
    let (fd, smooth) = central_difference(|s| loss_at(&shifted(s)).unwrap_or(f64::NAN), value);
    Some(GradCheck { ad, fd, value, smooth })
}

/// Gradient checks: `cases` per loss component plus `cases` full-rollout
/// checks. One report per component.
pub fn gradient_suite(cases: usize, seed: u64, params: &VehicleParams) -> Vec<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reports = Vec::new();
    for component in Component::ALL {
        let mut errors = Vec::with_capacity(cases);
        let mut skipped = 0;
        while errors.len() < cases {
            let case = gradient_case(component, &mut rng);
            let dir = unit_direction(24, &mut rng);
            let check = component_gradient_check(component, &case, &dir, params);
            if check.value > 0.0 {
                if check.smooth {
                    errors.push(check.error());
                } else {
                    skipped += 1;
                }
            }
        }
        let mut report = SuiteReport::from_errors(&format!("gradient/{}", component.name()), &errors, 1e-4);
        report.skipped = skipped;
        reports.push(report);
    }
    let mut errors = Vec::with_capacity(cases);
    let mut skipped = 0;
    let mut attempts = 0;
    while errors.len() < cases && attempts < 20 * cases {
        attempts += 1;
        let model = PlannerModel::init(rng.gen());
        let case = gradient_case(Component::Total, &mut rng);
        let task = TaskInput::new(case.fs.clone(), case.q0, case.qd);
        let dir = unit_direction(model.params.len(), &mut rng);
        match rollout_gradient_check(&model, &task, &dir, params) {
            Some(c) if c.smooth => errors.push(c.error()),
            Some(_) => skipped += 1,
            None => {}
        }
    }
    let mut report = SuiteReport::from_errors("gradient/rollout", &errors, 1e-4);
    report.skipped = skipped;
    reports.push(report);
    reports
}

/// A random assembled spline: six gluing points and a reachable goal.
pub fn random_path(rng: &mut ChaCha8Rng) -> crate::spline::PathSpline {
    loop {
        let q0 = Pose2::new(rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0), rng.gen_range(-3.1..3.1));
        let gps: Vec<GluingPoint> = (0..6)
            .map(|_| {
                GluingPoint::new(
                    rng.gen_range(0.5..8.0),
                    rng.gen_range(-2.0..2.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-0.3..0.3),
                )
            })
            .collect();
        let Some(last) = last_frame(&q0, &gps) else { continue };
        let qd = last.compose(&Pose2::new(rng.gen_range(1.0..8.0), rng.gen_range(-2.0..2.0), rng.gen_range(-1.0..1.0)));
        if let Ok(p) = assemble(&q0, &gps, &qd) {
            return p;
        }
    }
}

/// Junction gaps of `n` random splines against the position, tangent and
/// curvature tolerances.
pub fn continuity_suite(n: usize, seed: u64) -> Vec<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gaps: Vec<(f64, f64, f64)> = (0..n).map(|_| junction_gaps(&random_path(&mut rng))).collect();
    vec![
        SuiteReport::from_errors("continuity/position", &gaps.iter().map(|g| g.0).collect::<Vec<_>>(), 1e-9),
        SuiteReport::from_errors("continuity/tangent", &gaps.iter().map(|g| g.1).collect::<Vec<_>>(), 1e-9),
        SuiteReport::from_errors("continuity/curvature", &gaps.iter().map(|g| g.2).collect::<Vec<_>>(), 1e-8),
    ]
}

fn random_quad(rng: &mut ChaCha8Rng) -> Quadrangle {
    let (w, h) = (rng.gen_range(1.0..15.0), rng.gen_range(1.0..15.0));
    let shear = rng.gen_range(-0.4..0.4) * w;
    let local = Quadrangle::new([
        Point2::new(0.0, 0.0),
        Point2::new(w, 0.0),
        Point2::new(w + shear, h),
        Point2::new(shear.min(w * 0.5), h),
    ])
    .or_else(|_| Quadrangle::rect(0.0, 0.0, w, h))
    .unwrap();
    Rigid2::new(rng.gen_range(-3.1..3.1), rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0)).quad(&local)
}

pub fn random_free_space(rng: &mut ChaCha8Rng) -> FreeSpace {
    let n = rng.gen_range(1..=6);
    FreeSpace::new((0..n).map(|_| random_quad(rng)).collect()).unwrap()
}

/// Map-encoding permutation and vertex-rotation invariance, footprint and
/// collision-loss rigid-motion invariance.
pub fn invariance_suite(n: usize, seed: u64, params: &VehicleParams) -> Vec<SuiteReport> {
    use rand::seq::SliceRandom;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = PlannerModel::init(seed);
    let mut enc = Vec::with_capacity(n);
    let mut foot = Vec::with_capacity(n);
    let mut coll = Vec::with_capacity(n);
    for _ in 0..n {
        let fs = random_free_space(&mut rng);
        let reference = Pose2::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-3.0..3.0));
        let base = encode_map(&fs, &reference, &model);
        let mut quads: Vec<Quadrangle> = fs.quads().to_vec();
        quads.shuffle(&mut rng);
        let quads: Vec<Quadrangle> = quads.iter().map(|q| q.rotated(rng.gen_range(0..4))).collect();
        let other = encode_map(&FreeSpace::new(quads).unwrap(), &reference, &model);
        enc.push(base.iter().zip(&other).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));

        let motion = Rigid2::new(rng.gen_range(-3.1..3.1), rng.gen_range(-30.0..30.0), rng.gen_range(-30.0..30.0));
        let pose = Pose2::new(rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0), rng.gen_range(-3.1..3.1));
        let moved = footprint(&motion.pose(&pose), params);
        let err = footprint(&pose, params)
            .points
            .iter()
            .zip(moved.points.iter())
            .map(|(&p, &q)| motion.point(p).dist(q) / (1.0 + p.norm()))
            .fold(0.0, f64::max);
        foot.push(err);

        let path = random_path(&mut rng);
        let corridor = Rigid2::new(path.q0.heading, path.q0.x(), path.q0.y())
            .free_space(&FreeSpace::new(vec![Quadrangle::rect(-3.0, -2.0, 30.0, 2.0).unwrap()]).unwrap());
        let a = collision_loss(&sample(&path), &corridor, params);
        let moved_path = assemble(&motion.pose(&path.q0), &path.gluing_points, &motion.pose(&path.qd)).unwrap();
        let b = collision_loss(&sample(&moved_path), &motion.free_space(&corridor), params);
        coll.push((a - b).abs() / a.abs().max(b.abs()).max(1e-12));
    }
    vec![
        SuiteReport::from_errors("invariance/map_encoding", &enc, 1e-6),
        SuiteReport::from_errors("invariance/footprint", &foot, 1e-6),
        SuiteReport::from_errors("invariance/collision_loss", &coll, 1e-6),
    ]
}

/// Agreement between zero loss violations and the coarse validator on `n`
/// random paths in corridors of random width. Returns the report and the
/// number of accepted paths.
pub fn equivalence_suite(n: usize, seed: u64, params: &VehicleParams) -> (SuiteReport, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let validator = Validator::coarse();
    let mut disagreements = Vec::with_capacity(n);
    let mut accepted = 0;
    for _ in 0..n {
        let q0 = Pose2::new(0.0, 0.0, 0.0);
        let gps: Vec<GluingPoint> = (0..6)
            .map(|_| {
                GluingPoint::new(
                    rng.gen_range(3.0..6.0),
                    rng.gen_range(-0.3..0.3),
                    rng.gen_range(-0.08..0.08),
                    rng.gen_range(-0.03..0.03),
                )
            })
            .collect();
        let Some(last) = last_frame(&q0, &gps) else { continue };
        let qd = last.compose(&Pose2::new(rng.gen_range(3.0..6.0), rng.gen_range(-0.3..0.3), rng.gen_range(-0.1..0.1)));
        let Ok(path) = assemble(&q0, &gps, &qd) else { continue };
        let half = rng.gen_range(1.0..3.0);
        let fs = FreeSpace::new(vec![Quadrangle::rect(-3.0, -half, 80.0, half).unwrap()]).unwrap();
        let zero = evaluate_path(&path, &fs, params, Phase::Main).is_feasible();
        let ok = validator.validate(&path, &fs, &q0, &qd, params).accepted;
        accepted += usize::from(ok);
        disagreements.push(if zero == ok { 0.0 } else { 1.0 });
    }
    (SuiteReport::from_errors("equivalence/loss_vs_validator", &disagreements, 0.0), accepted)
}
