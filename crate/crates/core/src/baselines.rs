//! Reference planners: a state-lattice A* over quintic motion primitives and
//! RRT* with a Dubins metric and single-quintic extension.
//!
//! Both build their output with [`assemble`], so a result is an ordinary
//! [`PathSpline`] and every edge is checked with the same [`Validator`]
//! that certifies the final path. Lattice states have zero curvature; RRT*
//! nodes carry the curvature of the steering curve they were sampled from.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::f64::consts::PI;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dubins::dubins_shortest;
use crate::geometry::{wrap_angle, FreeSpace, Pose2};
use crate::spline::{assemble, curvature, poly_eval, solve_segment, GluingPoint, PathSpline, QuinticSegment, MIN_SPAN};
use crate::task::TaskInput;
use crate::validate::Validator;
use crate::vehicle::{footprint, VehicleParams};

/// Largest heading change a single connecting segment may make.
const MAX_TURN: f64 = 80.0 * PI / 180.0;
const CURVATURE_SAMPLES: usize = 255;

#[derive(Debug, thiserror::Error)]
pub enum PrimitiveError {
    #[error("primitive file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported primitive file format {0:?} version {1}")]
    Format(String, u32),
    #[error("primitive {name}: {reason}")]
    Invalid { name: String, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanStatus {
    Feasible,
    Timeout,
    Infeasible,
}

impl std::fmt::Display for PlanStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PlanStatus::Feasible => "feasible",
            PlanStatus::Timeout => "timeout",
            PlanStatus::Infeasible => "infeasible",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanResult {
    pub status: PlanStatus,
    pub path: Option<PathSpline>,
    pub time_s: f64,
    pub length: Option<f64>,
    /// Node expansions (lattice) or sampling iterations (RRT*).
    pub iterations: usize,
}

impl PlanResult {
    fn new(status: PlanStatus, path: Option<PathSpline>, started: Instant, iterations: usize) -> Self {
        let length = path.as_ref().map(PathSpline::length);
        Self { status, path, time_s: started.elapsed().as_secs_f64(), length, iterations }
    }
}

/// Quintic from `from` to `to` with zero curvature at both ends, expressed
/// as the gluing point in `from`'s frame.
pub fn connect(from: &Pose2, to: &Pose2) -> Option<(GluingPoint, QuinticSegment)> {
    connect_curved(from, 0.0, to, 0.0)
}

/// Like [`connect`], with prescribed signed curvature at both ends.
pub fn connect_curved(from: &Pose2, from_curv: f64, to: &Pose2, to_curv: f64) -> Option<(GluingPoint, QuinticSegment)> {
    let rel = from.relative(to);
    let turn = wrap_angle(rel.heading);
    if !(rel.x() >= MIN_SPAN) || turn.abs() > MAX_TURN {
        return None;
    }
    let dy = turn.tan();
    let gp = GluingPoint::new(rel.x(), rel.y(), dy, to_curv * (1.0 + dy * dy).powf(1.5));
    let coeffs = solve_segment(from_curv, &gp).ok()?;
    Some((gp, QuinticSegment { coeffs, span: gp.x, frame: *from }))
}

fn max_abs_curvature(coeffs: &[f64; 6], span: f64) -> f64 {
    (0..=CURVATURE_SAMPLES)
        .map(|j| {
            let (_, d1, d2) = poly_eval(coeffs, span * j as f64 / CURVATURE_SAMPLES as f64);
            curvature(d1, d2).abs()
        })
        .fold(0.0, f64::max)
}

fn pose_free(p: &Pose2, fs: &FreeSpace, params: &VehicleParams) -> bool {
    footprint(p, params).points.iter().all(|&c| fs.contains(c))
}

/// True when the final segment from `from` may close at `qd`.
fn approaches_goal(from: &Pose2, qd: &Pose2) -> bool {
    qd.to_local(from.position).x < 0.0
}

/// One motion primitive: a quintic leaving the origin along +x with zero
/// curvature and ending with zero curvature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub name: String,
    pub coeffs: [f64; 6],
    pub span: f64,
}

impl Primitive {
    /// Primitive ending at the local pose `end`.
    pub fn to_pose(name: &str, end: &Pose2) -> Option<Self> {
        let (_, seg) = connect(&Pose2::new(0.0, 0.0, 0.0), end)?;
        Some(Self { name: name.into(), coeffs: seg.coeffs, span: seg.span })
    }

    pub fn end_pose(&self) -> Pose2 {
        let (y, d1, _) = poly_eval(&self.coeffs, self.span);
        Pose2::new(self.span, y, d1.atan())
    }

    pub fn max_curvature(&self) -> f64 {
        max_abs_curvature(&self.coeffs, self.span)
    }

    pub fn length(&self) -> f64 {
        QuinticSegment { coeffs: self.coeffs, span: self.span, frame: Pose2::new(0.0, 0.0, 0.0) }.arc_length()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimitiveSet {
    pub format: String,
    pub version: u32,
    pub primitives: Vec<Primitive>,
}

const PRIMITIVE_FORMAT: &str = "kinoplan-primitives";

impl PrimitiveSet {
    /// The committed nine-primitive set.
    pub fn builtin() -> Self {
        Self::from_json(include_str!("../data/primitives.json")).expect("bundled primitive file is valid")
    }

    /// Nominal end poses of the committed set: a short straight, lateral
    /// offsets of 1 m, and heading changes of 22.5 and 45 degrees (the
    /// latter at two radii).
    pub fn nominal_ends() -> Vec<(&'static str, Pose2)> {
        let turn = |deg: f64, x: f64| {
            let a = deg.to_radians();
            Pose2::new(x, x * (a / 2.0).tan(), a)
        };
        vec![
            ("straight", Pose2::new(2.0, 0.0, 0.0)),
            ("offset_left", Pose2::new(6.0, 1.0, 0.0)),
            ("offset_right", Pose2::new(6.0, -1.0, 0.0)),
            ("turn_left_22", turn(22.5, 3.5)),
            ("turn_right_22", turn(-22.5, 3.5)),
            ("turn_left_45_tight", turn(45.0, 6.5)),
            ("turn_right_45_tight", turn(-45.0, 6.5)),
            ("turn_left_45_wide", turn(45.0, 10.0)),
            ("turn_right_45_wide", turn(-45.0, 10.0)),
        ]
    }

    pub fn from_nominal() -> Self {
        let primitives = Self::nominal_ends()
            .iter()
            .map(|(name, end)| Primitive::to_pose(name, end).expect("nominal primitive is solvable"))
            .collect();
        Self { format: PRIMITIVE_FORMAT.into(), version: 1, primitives }
    }

    pub fn from_json(text: &str) -> Result<Self, PrimitiveError> {
        let set: Self = serde_json::from_str(text)?;
        if set.format != PRIMITIVE_FORMAT || set.version != 1 {
            return Err(PrimitiveError::Format(set.format, set.version));
        }
        Ok(set)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, PrimitiveError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn check(&self, params: &VehicleParams) -> Result<(), PrimitiveError> {
        for p in &self.primitives {
            let invalid = |reason: String| PrimitiveError::Invalid { name: p.name.clone(), reason };
            if !(p.span >= MIN_SPAN) || p.coeffs[..3].iter().any(|c| c.abs() > 1e-12) {
                return Err(invalid("must start at the origin along +x with zero curvature".into()));
            }
            let k = p.max_curvature();
            if k > params.kappa_max {
                return Err(invalid(format!("curvature {k} exceeds {}", params.kappa_max)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatticeConfig {
    /// Grid spacing in meters.
    pub resolution: f64,
    /// Number of heading bins over a full turn.
    pub headings: u32,
    pub heuristic_weight: f64,
    pub max_time_s: f64,
    pub goal_position_tol: f64,
    pub goal_heading_tol_deg: f64,
    /// States within this distance of the goal also try the direct closing
    /// segment.
    pub goal_connect_radius: f64,
    /// Pose the grid and its heading bins are aligned with.
    pub anchor: LatticeAnchor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatticeAnchor {
    Start,
    Goal,
}

impl Default for LatticeConfig {
    fn default() -> Self {
        Self {
            resolution: 0.25,
            headings: 16,
            heuristic_weight: 1.0,
            max_time_s: 10.0,
            goal_position_tol: 0.25,
            goal_heading_tol_deg: 5.0,
            goal_connect_radius: 12.0,
            anchor: LatticeAnchor::Start,
        }
    }
}

/// Search node of the lattice graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Node {
    Start,
    /// Grid cell `(i, j)` and heading bin `h` in the anchor's frame.
    Cell(i32, i32, i32),
    Goal,
}

#[derive(Debug, Clone, Copy)]
struct Edge {
    di: i32,
    dj: i32,
    dh: i32,
    gp: GluingPoint,
    coeffs: [f64; 6],
}

/// State lattice on a grid aligned with the start or goal pose. The goal
/// is entered through an exact closing segment from nearby states.
pub struct Lattice<'a> {
    config: LatticeConfig,
    task: &'a TaskInput,
    params: VehicleParams,
    primitives: Vec<Pose2>,
    /// Primitive edges per heading bin, rotated and snapped to the grid.
    table: Vec<Vec<Edge>>,
    origin: Pose2,
    validator: Validator,
}

impl<'a> Lattice<'a> {
    pub fn new(task: &'a TaskInput, primitives: &PrimitiveSet, config: &LatticeConfig, params: &VehicleParams) -> Self {
        let step = std::f64::consts::TAU / config.headings as f64;
        let ends: Vec<Pose2> = primitives.primitives.iter().map(Primitive::end_pose).collect();
        let table = (0..config.headings as i32)
            .map(|h| {
                let origin = Pose2::new(0.0, 0.0, h as f64 * step);
                let mut edges = Vec::new();
                for end in &ends {
                    let world = origin.compose(end);
                    let (di, dj) = ((world.x() / config.resolution).round() as i32, (world.y() / config.resolution).round() as i32);
                    let dh = (end.heading / step).round() as i32;
                    let target = Pose2::new(di as f64 * config.resolution, dj as f64 * config.resolution, (h + dh) as f64 * step);
                    match connect(&origin, &target) {
                        Some((gp, seg)) if max_abs_curvature(&seg.coeffs, seg.span) <= params.kappa_max => {
                            if !edges.iter().any(|e: &Edge| (e.di, e.dj, e.dh) == (di, dj, dh)) {
                                edges.push(Edge { di, dj, dh, gp, coeffs: seg.coeffs });
                            }
                        }
                        _ => log::debug!("primitive to {end:?} dropped at heading bin {h}"),
                    }
                }
                edges
            })
            .collect();
        let origin = match config.anchor {
            LatticeAnchor::Start => task.q0,
            LatticeAnchor::Goal => task.qd,
        };
        Self { config: config.clone(), task, params: *params, primitives: ends, table, origin, validator: Validator::default() }
    }

    fn heading_step(&self) -> f64 {
        std::f64::consts::TAU / self.config.headings as f64
    }

    pub fn pose(&self, node: Node) -> Pose2 {
        match node {
            Node::Start => self.task.q0,
            Node::Goal => self.task.qd,
            Node::Cell(i, j, h) => self.origin.compose(&Pose2::new(
                i as f64 * self.config.resolution,
                j as f64 * self.config.resolution,
                h as f64 * self.heading_step(),
            )),
        }
    }

    fn near_goal(&self, p: &Pose2) -> bool {
        p.position.dist(self.task.qd.position) <= self.config.goal_position_tol
            && wrap_angle(p.heading - self.task.qd.heading).abs() <= self.config.goal_heading_tol_deg.to_radians()
    }

    fn free(&self, seg: &QuinticSegment) -> bool {
        self.validator.segment_ok(seg, &self.task.fs, &self.params)
    }

    /// Goal edge from `from`: the exact closing segment onto `qd`.
    fn goal_edge(&self, from: &Pose2) -> Option<(GluingPoint, f64)> {
        if !approaches_goal(from, &self.task.qd) {
            return None;
        }
        let (gp, seg) = connect(from, &self.task.qd)?;
        self.free(&seg).then(|| (gp, seg.arc_length()))
    }

    /// Outgoing edges of `node` with their costs and gluing points.
    pub fn successors(&self, node: Node) -> Vec<(Node, f64, GluingPoint)> {
        let from = self.pose(node);
        let mut out = Vec::new();
        let mut goal_offered = false;
        if node != Node::Goal && from.position.dist(self.task.qd.position) <= self.config.goal_connect_radius {
            goal_offered = true;
            if let Some((gp, cost)) = self.goal_edge(&from) {
                out.push((Node::Goal, cost, gp));
            }
        }
        let mut offer_goal = |out: &mut Vec<_>, target: &Pose2| {
            if !goal_offered && self.near_goal(target) {
                goal_offered = true;
                if let Some((gp, cost)) = self.goal_edge(&from) {
                    out.push((Node::Goal, cost, gp));
                }
            }
        };
        match node {
            Node::Goal => {}
            Node::Start => {
                let step = self.heading_step();
                let rel = |p: &Pose2| self.origin.relative(p);
                for end in &self.primitives {
                    let nominal = rel(&from.compose(end));
                    let (i, j) = (
                        (nominal.x() / self.config.resolution).round() as i32,
                        (nominal.y() / self.config.resolution).round() as i32,
                    );
                    let h = (wrap_angle(nominal.heading) / step).round() as i32;
                    let target_node = Node::Cell(i, j, h.rem_euclid(self.config.headings as i32));
                    let target = self.pose(target_node);
                    offer_goal(&mut out, &target);
                    if let Some((gp, seg)) = connect(&from, &target) {
                        if !out.iter().any(|(n, _, _)| *n == target_node) && self.free(&seg) {
                            out.push((target_node, seg.arc_length(), gp));
                        }
                    }
                }
            }
            Node::Cell(i, j, h) => {
                for e in &self.table[h as usize] {
                    let target_node = Node::Cell(i + e.di, j + e.dj, (h + e.dh).rem_euclid(self.config.headings as i32));
                    let target = self.pose(target_node);
                    offer_goal(&mut out, &target);
                    let seg = QuinticSegment { coeffs: e.coeffs, span: e.gp.x, frame: from };
                    if self.free(&seg) {
                        out.push((target_node, seg.arc_length(), e.gp));
                    }
                }
            }
        }
        out
    }

    /// Admissible cost-to-go: Dubins length to the goal.
    pub fn heuristic(&self, node: Node) -> f64 {
        match node {
            Node::Goal => 0.0,
            _ => dubins_shortest(&self.pose(node), &self.task.qd, self.params.min_turn_radius()).1,
        }
    }

    pub fn primitive_count(&self) -> usize {
        self.primitives.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Queued {
    f: f64,
    order: u64,
    node: Node,
}

impl Eq for Queued {}

impl Ord for Queued {
    fn cmp(&self, other: &Self) -> Ordering {
        other.f.total_cmp(&self.f).then(other.order.cmp(&self.order))
    }
}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// A* over the lattice.
pub fn lattice_astar(task: &TaskInput, primitives: &PrimitiveSet, config: &LatticeConfig, params: &VehicleParams) -> PlanResult {
    let started = Instant::now();
    let budget = Duration::from_secs_f64(config.max_time_s);
    if !pose_free(&task.q0, &task.fs, params) || !pose_free(&task.qd, &task.fs, params) {
        return PlanResult::new(PlanStatus::Infeasible, None, started, 0);
    }
    let lattice = Lattice::new(task, primitives, config, params);
    let mut best: HashMap<Node, (f64, Option<(Node, GluingPoint)>)> = HashMap::new();
    let mut closed: HashMap<Node, ()> = HashMap::new();
    let mut open = BinaryHeap::new();
    let mut order = 0u64;
    best.insert(Node::Start, (0.0, None));
    open.push(Queued { f: 0.0, order, node: Node::Start });
    let mut expansions = 0usize;
    while let Some(Queued { node, .. }) = open.pop() {
        if closed.insert(node, ()).is_some() {
            continue;
        }
        if node == Node::Goal {
            let path = reconstruct(&best, task);
            return finish(path, task, params, started, expansions);
        }
        expansions += 1;
        if expansions % 32 == 0 && started.elapsed() > budget {
            return PlanResult::new(PlanStatus::Timeout, None, started, expansions);
        }
        let g = best[&node].0;
        for (next, cost, gp) in lattice.successors(node) {
            let g_next = g + cost;
            if closed.contains_key(&next) || best.get(&next).is_some_and(|(b, _)| *b <= g_next) {
                continue;
            }
            best.insert(next, (g_next, Some((node, gp))));
            order += 1;
            open.push(Queued { f: g_next + config.heuristic_weight * lattice.heuristic(next), order, node: next });
        }
    }
    PlanResult::new(PlanStatus::Infeasible, None, started, expansions)
}

fn reconstruct(best: &HashMap<Node, (f64, Option<(Node, GluingPoint)>)>, task: &TaskInput) -> Option<PathSpline> {
    let mut gps = Vec::new();
    let mut node = Node::Goal;
    while let Some((prev, gp)) = best[&node].1 {
        if node != Node::Goal {
            gps.push(gp);
        }
        node = prev;
    }
    gps.reverse();
    assemble(&task.q0, &gps, &task.qd).ok()
}

fn finish(path: Option<PathSpline>, task: &TaskInput, params: &VehicleParams, started: Instant, iterations: usize) -> PlanResult {
    match path {
        Some(p) if Validator::default().validate(&p, &task.fs, &task.q0, &task.qd, params).accepted => {
            PlanResult::new(PlanStatus::Feasible, Some(p), started, iterations)
        }
        _ => {
            log::warn!("planner produced a path the validator rejects; reporting infeasible");
            PlanResult::new(PlanStatus::Infeasible, None, started, iterations)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RrtStarConfig {
    pub max_time_s: f64,
    /// Optional iteration cap, which makes a run independent of machine speed.
    pub max_iterations: Option<usize>,
    /// Longest Dubins distance covered by one extension.
    pub steer_step: f64,
    pub goal_bias: f64,
    /// Extensions follow Dubins curves of this multiple of the minimum
    /// turning radius, so the single-quintic edge that replaces them stays
    /// within the curvature limit.
    pub steer_radius_scale: f64,
    /// Shrinking-ball constant: radius = gamma * (ln n / n)^(1/3).
    pub gamma: f64,
    /// Goal connections are attempted from nodes within this Dubins distance.
    pub goal_radius: f64,
    pub seed: u64,
}

impl Default for RrtStarConfig {
    fn default() -> Self {
        Self {
            max_time_s: 10.0,
            max_iterations: None,
            steer_step: 6.0,
            goal_bias: 0.1,
            steer_radius_scale: 1.5,
            gamma: 30.0,
            goal_radius: 15.0,
            seed: 0,
        }
    }
}

impl RrtStarConfig {
    pub fn check(&self) -> Result<(), String> {
        if !(self.max_time_s > 0.0) {
            return Err("max_time_s must be positive".into());
        }
        if !(self.steer_step > MIN_SPAN) || !(0.0..=1.0).contains(&self.goal_bias) || !(self.gamma > 0.0) || !(self.steer_radius_scale >= 1.0) {
            return Err("steer_step, goal_bias, steer_radius_scale or gamma out of range".into());
        }
        Ok(())
    }
}

struct TreeNode {
    pose: Pose2,
    /// Signed curvature at the node, shared by the edges on both sides.
    curv: f64,
    parent: Option<usize>,
    /// Gluing point of the edge from the parent.
    gp: GluingPoint,
    cost: f64,
    children: Vec<usize>,
}

/// RRT* rooted at `q0`, returning the first path that closes onto `qd`.
pub fn rrt_star(task: &TaskInput, config: &RrtStarConfig, params: &VehicleParams) -> PlanResult {
    let started = Instant::now();
    let budget = Duration::from_secs_f64(config.max_time_s);
    if !pose_free(&task.q0, &task.fs, params) || !pose_free(&task.qd, &task.fs, params) {
        return PlanResult::new(PlanStatus::Infeasible, None, started, 0);
    }
    let validator = Validator::default();
    let radius = params.min_turn_radius();
    let dist = |a: &Pose2, b: &Pose2| dubins_shortest(a, b, radius).1;
    let edge = |a: &Pose2, ka: f64, b: &Pose2, kb: f64| -> Option<(GluingPoint, f64)> {
        let (gp, seg) = connect_curved(a, ka, b, kb)?;
        validator.segment_ok(&seg, &task.fs, params).then(|| (gp, seg.arc_length()))
    };
    let (lo, hi) = task.fs.bounding_box();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut tree = vec![TreeNode {
        pose: task.q0,
        parent: None,
        curv: 0.0,
        gp: GluingPoint::new(0.0, 0.0, 0.0, 0.0),
        cost: 0.0,
        children: Vec::new(),
    }];
    let mut iterations = 0usize;
    loop {
        if started.elapsed() > budget || config.max_iterations.is_some_and(|m| iterations >= m) {
            return PlanResult::new(PlanStatus::Timeout, None, started, iterations);
        }
        iterations += 1;
        let sample = if rng.gen::<f64>() < config.goal_bias {
            task.qd
        } else {
            Pose2::new(rng.gen_range(lo.x..=hi.x), rng.gen_range(lo.y..=hi.y), rng.gen_range(-PI..PI))
        };
        let mut nearest = (f64::INFINITY, 0);
        for (k, n) in tree.iter().enumerate() {
            if n.pose.position.dist(sample.position) < nearest.0 {
                let d = dist(&n.pose, &sample);
                if d < nearest.0 {
                    nearest = (d, k);
                }
            }
        }
        let from = tree[nearest.1].pose;
        let (target, curv) = if nearest.0 <= config.steer_step {
            (sample, 0.0)
        } else {
            let paths = crate::dubins::dubins_all(&from, &sample, radius * config.steer_radius_scale);
            (paths[0].sample(config.steer_step), paths[0].curvature_at(config.steer_step))
        };
        if !pose_free(&target, &task.fs, params) {
            continue;
        }
        let n = tree.len() as f64;
        let ball = (config.gamma * ((n + 1.0).ln() / (n + 1.0)).cbrt()).min(2.0 * config.steer_step);
        let near: Vec<usize> = (0..tree.len())
            .filter(|&k| k == nearest.1 || (tree[k].pose.position.dist(target.position) <= ball && dist(&tree[k].pose, &target) <= ball))
            .collect();
        let mut parent: Option<(usize, GluingPoint, f64)> = None;
        for &k in &near {
            if let Some((gp, len)) = edge(&tree[k].pose, tree[k].curv, &target, curv) {
                let c = tree[k].cost + len;
                if parent.as_ref().map_or(true, |p| c < p.2) {
                    parent = Some((k, gp, c));
                }
            }
        }
        let Some((pk, gp, cost)) = parent else { continue };
        let new = tree.len();
        tree.push(TreeNode { pose: target, curv, parent: Some(pk), gp, cost, children: Vec::new() });
        tree[pk].children.push(new);
        for &k in &near {
            if k == pk || k == 0 {
                continue;
            }
            if let Some((gp, len)) = edge(&target, curv, &tree[k].pose, tree[k].curv) {
                if cost + len < tree[k].cost {
                    rewire(&mut tree, k, new, gp, cost + len);
                }
            }
        }
        // The edge into a node sitting on the goal is itself the closing
        // segment; otherwise try to close from the new node.
        let last = if target == task.qd {
            Some(tree[new].parent.expect("new node has a parent"))
        } else if approaches_goal(&target, &task.qd) && dist(&target, &task.qd) <= config.goal_radius && edge(&target, curv, &task.qd, 0.0).is_some() {
            Some(new)
        } else {
            None
        };
        if let Some(last) = last.filter(|&k| approaches_goal(&tree[k].pose, &task.qd)) {
            let mut gps = Vec::new();
            let mut k = last;
            while let Some(p) = tree[k].parent {
                gps.push(tree[k].gp);
                k = p;
            }
            gps.reverse();
            let path = assemble(&task.q0, &gps, &task.qd).ok();
            return finish(path, task, params, started, iterations);
        }
    }
}

fn rewire(tree: &mut [TreeNode], k: usize, new_parent: usize, gp: GluingPoint, cost: f64) {
    if let Some(old) = tree[k].parent {
        tree[old].children.retain(|&c| c != k);
    }
    tree[k].parent = Some(new_parent);
    tree[k].gp = gp;
    tree[new_parent].children.push(k);
    let delta = cost - tree[k].cost;
    let mut stack = vec![k];
    while let Some(c) = stack.pop() {
        tree[c].cost += delta;
        stack.extend(tree[c].children.iter().copied());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Quadrangle;

    fn task(fs: Quadrangle, q0: Pose2, qd: Pose2) -> TaskInput {
        TaskInput::new(FreeSpace::new(vec![fs]).unwrap(), q0, qd)
    }

    #[test]
    fn builtin_matches_nominal_and_respects_curvature() {
        let params = VehicleParams::default();
        let set = PrimitiveSet::builtin();
        assert_eq!(set.primitives.len(), 9);
        set.check(&params).unwrap();
        let nominal = PrimitiveSet::from_nominal();
        for (a, b) in set.primitives.iter().zip(&nominal.primitives) {
            assert_eq!(a.name, b.name);
            assert!((a.span - b.span).abs() < 1e-12);
            for (x, y) in a.coeffs.iter().zip(&b.coeffs) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn snapped_tables_keep_all_primitives() {
        let t = task(Quadrangle::rect(-20.0, -20.0, 20.0, 20.0).unwrap(), Pose2::new(-10.0, 0.0, 0.0), Pose2::new(0.0, 0.0, 0.0));
        let lattice = Lattice::new(&t, &PrimitiveSet::builtin(), &LatticeConfig::default(), &VehicleParams::default());
        for edges in &lattice.table {
            assert_eq!(edges.len(), 9);
        }
    }

    #[test]
    fn straight_corridor_uses_straight_primitive() {
        let t = task(Quadrangle::rect(-2.0, -3.0, 30.0, 3.0).unwrap(), Pose2::new(0.0, 0.0, 0.0), Pose2::new(20.0, 0.0, 0.0));
        let params = VehicleParams::default();
        let r = lattice_astar(&t, &PrimitiveSet::builtin(), &LatticeConfig::default(), &params);
        assert_eq!(r.status, PlanStatus::Feasible);
        assert!((r.length.unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn colliding_start_is_infeasible() {
        let t = task(Quadrangle::rect(0.0, -3.0, 30.0, 3.0).unwrap(), Pose2::new(0.0, 0.0, 0.0), Pose2::new(20.0, 0.0, 0.0));
        let params = VehicleParams::default();
        assert_eq!(lattice_astar(&t, &PrimitiveSet::builtin(), &LatticeConfig::default(), &params).status, PlanStatus::Infeasible);
        assert_eq!(rrt_star(&t, &RrtStarConfig::default(), &params).status, PlanStatus::Infeasible);
    }

    #[test]
    fn rrt_open_space_is_deterministic() {
        let t = task(Quadrangle::rect(-20.0, -20.0, 20.0, 20.0).unwrap(), Pose2::new(-5.0, 0.0, 0.0), Pose2::new(5.0, 0.0, 0.0));
        let params = VehicleParams::default();
        let config = RrtStarConfig { seed: 3, max_iterations: Some(5000), ..RrtStarConfig::default() };
        let a = rrt_star(&t, &config, &params);
        let b = rrt_star(&t, &config, &params);
        assert_eq!(a.status, PlanStatus::Feasible);
        assert_eq!(a.path, b.path);
    }
}
