//! Random planning tasks for the three maneuver families.
//!
//! Environments are instantiated from parameterized templates
//! (`data/templates.json`); start and goal poses are then drawn inside them
//! and a task is admitted only when [`dubins_feasible`] finds a
//! collision-free Dubins connection.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dubins::dubins_feasible;
use crate::geometry::{FreeSpace, GeometryError, Point2, Pose2, Quadrangle};
use crate::task::TaskInput;
use crate::vehicle::VehicleParams;

const DEFAULT_TEMPLATES: &str = include_str!("../data/templates.json");
const LAYOUT_RETRIES: usize = 100;
/// Consecutive rejected candidates before generation gives up (admission
/// below 1% over this window).
pub const ADMISSION_WINDOW: usize = 100;

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("template `{kind}` produced degenerate geometry {retries} times: {last}")]
    Degenerate { kind: ScenarioKind, retries: usize, last: GeometryError },
    #[error("admission collapsed for `{kind}` task {index}: 0 of {window} candidates were Dubins-feasible (last rejection: {reason})")]
    Admission { kind: ScenarioKind, index: usize, window: usize, reason: String },
    #[error("no template for kind `{0}`")]
    MissingTemplate(ScenarioKind),
    #[error("dataset line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Overtaking,
    PerpendicularParking,
    ObliqueParking,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 3] =
        [ScenarioKind::Overtaking, ScenarioKind::PerpendicularParking, ScenarioKind::ObliqueParking];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Overtaking => "overtaking",
            ScenarioKind::PerpendicularParking => "perpendicular_parking",
            ScenarioKind::ObliqueParking => "oblique_parking",
        }
    }
}

impl std::fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ScenarioKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        ScenarioKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown scenario kind `{s}`"))
    }
}

/// `base + jitter * u`, `u ~ U[0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dim {
    pub base: f64,
    pub jitter: f64,
}

impl Dim {
    pub fn fixed(base: f64) -> Self {
        Self { base, jitter: 0.0 }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.jitter == 0.0 {
            self.base
        } else {
            self.base + self.jitter * rng.gen::<f64>()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Layout {
    /// Straight road along +x with an obstacle against its right edge.
    RoadObstacle { road_length: Dim, road_width: Dim, obstacle_x: Dim, obstacle_length: Dim, obstacle_width: Dim },
    /// Straight road along +x with a bay below it whose axis makes
    /// `bay_angle_deg` with the driving direction. The bay is `bay_width`
    /// wide across its axis and `bay_depth` deep along it.
    RoadBay { road_length: Dim, road_width: Dim, bay_x: Dim, bay_width: Dim, bay_depth: Dim, bay_angle_deg: Dim },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioTemplate {
    pub kind: ScenarioKind,
    pub layout: Layout,
    pub start_x: Dim,
    pub start_y: Dim,
    pub start_heading_deg: Dim,
    /// Overtaking: distance past the obstacle. Parking: clearance between
    /// the vehicle's front and the bay's far edge.
    pub goal_gap: Dim,
    /// Overtaking: distance from the right road edge. Parking: lateral
    /// offset from the bay axis.
    pub goal_y: Dim,
    /// Relative to the road (overtaking) or to the bay axis (parking).
    pub goal_heading_deg: Dim,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateSet {
    pub version: u32,
    #[serde(default)]
    pub note: String,
    pub templates: Vec<ScenarioTemplate>,
}

impl TemplateSet {
    pub fn builtin() -> Self {
        serde_json::from_str(DEFAULT_TEMPLATES).expect("bundled templates parse")
    }

    pub fn get(&self, kind: ScenarioKind) -> Result<&ScenarioTemplate, ScenarioError> {
        self.templates.iter().find(|t| t.kind == kind).ok_or(ScenarioError::MissingTemplate(kind))
    }
}

/// An instantiated layout with the anchors needed to place endpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    pub kind: ScenarioKind,
    pub fs: FreeSpace,
    anchors: Anchors,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Anchors {
    Road { obstacle_end: f64 },
    Bay { mouth_center: Point2, axis_heading: f64, depth: f64 },
}

fn build(layout: &Layout, rng: &mut ChaCha8Rng) -> Result<(FreeSpace, Anchors), GeometryError> {
    match layout {
        Layout::RoadObstacle { road_length, road_width, obstacle_x, obstacle_length, obstacle_width } => {
            let (len, w) = (road_length.draw(rng), road_width.draw(rng));
            let (ox, ol, ow) = (obstacle_x.draw(rng), obstacle_length.draw(rng), obstacle_width.draw(rng));
            let fs = FreeSpace::new(vec![
                Quadrangle::rect(0.0, 0.0, ox, w)?,
                Quadrangle::rect(ox, ow, ox + ol, w)?,
                Quadrangle::rect(ox + ol, 0.0, len, w)?,
            ])?;
            Ok((fs, Anchors::Road { obstacle_end: ox + ol }))
        }
        Layout::RoadBay { road_length, road_width, bay_x, bay_width, bay_depth, bay_angle_deg } => {
            let (len, w) = (road_length.draw(rng), road_width.draw(rng));
            let (bx, bw, bd) = (bay_x.draw(rng), bay_width.draw(rng), bay_depth.draw(rng));
            let angle = bay_angle_deg.draw(rng).to_radians();
            let mouth = bw / angle.sin();
            let u = Point2::new(angle.cos(), -angle.sin());
            let (a, b) = (Point2::new(bx, 0.0), Point2::new(bx + mouth, 0.0));
            // Side edges follow the axis; the far edge is square to it, `bd`
            // from the mouth center along the axis.
            let half = 0.5 * mouth * angle.cos();
            let bay = Quadrangle::new([a, a.add(u.scale(bd + half)), b.add(u.scale(bd - half)), b])?;
            let fs = FreeSpace::new(vec![Quadrangle::rect(0.0, 0.0, len, w)?, bay])?;
            let mouth_center = Point2::new(bx + mouth / 2.0, 0.0);
            Ok((fs, Anchors::Bay { mouth_center, axis_heading: -angle, depth: bd }))
        }
    }
}

/// Draws an environment from `template`; the same seed gives the same
/// free space.
pub fn instantiate(template: &ScenarioTemplate, seed: u64) -> Result<Environment, ScenarioError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut last = None;
    for _ in 0..LAYOUT_RETRIES {
        match build(&template.layout, &mut rng) {
            Ok((fs, anchors)) => return Ok(Environment { kind: template.kind, fs, anchors }),
            Err(e) => last = Some(e),
        }
    }
    Err(ScenarioError::Degenerate { kind: template.kind, retries: LAYOUT_RETRIES, last: last.expect("retried") })
}

/// Candidate endpoints for a task in `env` (not yet checked).
pub fn sample_endpoints(
    template: &ScenarioTemplate,
    env: &Environment,
    params: &VehicleParams,
    rng: &mut ChaCha8Rng,
) -> (Pose2, Pose2) {
    let q0 = Pose2::new(template.start_x.draw(rng), template.start_y.draw(rng), template.start_heading_deg.draw(rng).to_radians());
    let qd = match env.anchors {
        Anchors::Road { obstacle_end } => Pose2::new(
            obstacle_end + template.goal_gap.draw(rng),
            template.goal_y.draw(rng),
            template.goal_heading_deg.draw(rng).to_radians(),
        ),
        Anchors::Bay { mouth_center, axis_heading, depth } => {
            let along = depth - params.front_length - template.goal_gap.draw(rng);
            let lateral = template.goal_y.draw(rng);
            let axis = Pose2::new(mouth_center.x, mouth_center.y, axis_heading);
            let p = axis.to_world(Point2::new(along, lateral));
            Pose2::new(p.x, p.y, axis_heading + template.goal_heading_deg.draw(rng).to_radians())
        }
    };
    (q0, qd)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanningTask {
    pub env_id: u64,
    pub kind: ScenarioKind,
    #[serde(flatten)]
    pub input: TaskInput,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateConfig {
    pub kinds: Vec<ScenarioKind>,
    pub tasks_per_env: usize,
    /// Sampling step and grid resolution of the feasibility gate.
    pub resolution: f64,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self { kinds: ScenarioKind::ALL.to_vec(), tasks_per_env: 5, resolution: 0.4 }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub train: Vec<PlanningTask>,
    pub val: Vec<PlanningTask>,
    pub test: Vec<PlanningTask>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Independent 64-bit seed for `(seed, label, index)`.
pub fn derive_seed(seed: u64, label: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    h.update(index.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

struct Pool<'a> {
    templates: &'a TemplateSet,
    config: &'a GenerateConfig,
    params: &'a VehicleParams,
    seed: u64,
    label: &'static str,
    env_offset: u64,
}

impl Pool<'_> {
    fn task(&self, index: usize) -> Result<PlanningTask, ScenarioError> {
        let per_env = self.config.tasks_per_env.max(1);
        let env_local = (index / per_env) as u64;
        let kind = self.config.kinds[env_local as usize % self.config.kinds.len()];
        let template = self.templates.get(kind)?;
        let env = instantiate(template, derive_seed(self.seed, self.label, env_local))?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &format!("{}-task", self.label), index as u64));
        let mut reason = String::new();
        for _ in 0..ADMISSION_WINDOW {
            let (q0, qd) = sample_endpoints(template, &env, self.params, &mut rng);
            let input = TaskInput::new(env.fs.clone(), q0, qd);
            if !input.endpoints_free(self.params) {
                reason = "endpoint footprint outside free space".into();
                continue;
            }
            if qd.relative(&q0).x() >= 0.0 || !dubins_feasible(&q0, &qd, &env.fs, self.params, self.config.resolution) {
                reason = "no collision-free Dubins connection".into();
                continue;
            }
            return Ok(PlanningTask { env_id: self.env_offset + env_local, kind, input });
        }
        Err(ScenarioError::Admission { kind, index, window: ADMISSION_WINDOW, reason })
    }

    fn generate(&self, n: usize) -> Result<Vec<PlanningTask>, ScenarioError> {
        (0..n).into_par_iter().map(|i| self.task(i)).collect()
    }
}

/// Generates the three splits. Train and validation tasks share
/// environments; test environments are drawn separately and carry ids
/// disjoint from both.
pub fn generate_dataset(
    counts: DatasetCounts,
    seed: u64,
    config: &GenerateConfig,
    templates: &TemplateSet,
    params: &VehicleParams,
) -> Result<Dataset, ScenarioError> {
    if config.kinds.is_empty() {
        return Ok(Dataset::default());
    }
    let per_env = config.tasks_per_env.max(1);
    let pool_n = counts.train + counts.val;
    let pool = Pool { templates, config, params, seed, label: "pool", env_offset: 0 };
    let mut tasks = pool.generate(pool_n)?;
    let pool_envs = pool_n.div_ceil(per_env) as u64;
    let test = Pool { templates, config, params, seed, label: "test", env_offset: pool_envs }.generate(counts.test)?;

    let mut order: Vec<usize> = (0..pool_n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "split", 0));
    for i in (1..order.len()).rev() {
        order.swap(i, rng.gen_range(0..=i));
    }
    let mut is_val = vec![false; pool_n];
    for &i in &order[counts.train..] {
        is_val[i] = true;
    }
    let (mut train, mut val) = (Vec::with_capacity(counts.train), Vec::with_capacity(counts.val));
    for (i, t) in tasks.drain(..).enumerate() {
        if is_val[i] {
            val.push(t);
        } else {
            train.push(t);
        }
    }
    Ok(Dataset { train, val, test })
}

#[derive(Serialize)]
struct LineOut<'a> {
    split: Split,
    #[serde(flatten)]
    task: &'a PlanningTask,
}

#[derive(Deserialize)]
struct LineIn {
    #[serde(default)]
    split: Option<Split>,
    #[serde(flatten)]
    task: PlanningTask,
}

impl Dataset {
    pub fn split(&self, s: Split) -> &[PlanningTask] {
        match s {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// JSON lines: an optional `{"meta": ...}` header, then one task per
    /// line tagged with its split.
    pub fn write_jsonl<W: Write>(&self, mut w: W, meta: Option<&serde_json::Value>) -> Result<(), ScenarioError> {
        if let Some(m) = meta {
            serde_json::to_writer(&mut w, &serde_json::json!({ "meta": m }))?;
            w.write_all(b"\n")?;
        }
        for s in [Split::Train, Split::Val, Split::Test] {
            for task in self.split(s) {
                serde_json::to_writer(&mut w, &LineOut { split: s, task })?;
                w.write_all(b"\n")?;
            }
        }
        Ok(())
    }

    /// Reads the format written by [`Dataset::write_jsonl`]. Lines without a
    /// split go to the test split.
    pub fn read_jsonl<R: BufRead>(r: R) -> Result<(Self, Option<serde_json::Value>), ScenarioError> {
        let mut ds = Dataset::default();
        let mut meta = None;
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let value: serde_json::Value =
                serde_json::from_str(&line).map_err(|source| ScenarioError::Parse { line: i + 1, source })?;
            if let Some(m) = value.get("meta") {
                meta = Some(m.clone());
                continue;
            }
            let rec: LineIn = serde_json::from_str(&line).map_err(|source| ScenarioError::Parse { line: i + 1, source })?;
            match rec.split.unwrap_or(Split::Test) {
                Split::Train => ds.train.push(rec.task),
                Split::Val => ds.val.push(rec.task),
                Split::Test => ds.test.push(rec.task),
            }
        }
        Ok((ds, meta))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_jitter_is_base_layout() {
        let mut t = TemplateSet::builtin().get(ScenarioKind::Overtaking).unwrap().clone();
        if let Layout::RoadObstacle { road_width, obstacle_x, obstacle_length, obstacle_width, .. } = &mut t.layout {
            for d in [road_width, obstacle_x, obstacle_length, obstacle_width] {
                d.jitter = 0.0;
            }
        }
        let env = instantiate(&t, 17).unwrap();
        let q = env.fs.quads();
        assert_eq!(q.len(), 3);
        assert_eq!(q[0], Quadrangle::rect(0.0, 0.0, 20.0, 6.5).unwrap());
        assert_eq!(q[1], Quadrangle::rect(20.0, 1.8, 24.0, 6.5).unwrap());
    }

    #[test]
    fn same_seed_same_environment() {
        let set = TemplateSet::builtin();
        for k in ScenarioKind::ALL {
            let t = set.get(k).unwrap();
            assert_eq!(instantiate(t, 5).unwrap(), instantiate(t, 5).unwrap());
        }
    }

    #[test]
    fn empty_counts() {
        let ds = generate_dataset(
            DatasetCounts { train: 0, val: 0, test: 0 },
            1,
            &GenerateConfig::default(),
            &TemplateSet::builtin(),
            &VehicleParams::default(),
        )
        .unwrap();
        assert!(ds.is_empty());
    }

    #[test]
    fn jsonl_round_trip() {
        let ds = generate_dataset(
            DatasetCounts { train: 3, val: 2, test: 2 },
            11,
            &GenerateConfig::default(),
            &TemplateSet::builtin(),
            &VehicleParams::default(),
        )
        .unwrap();
        let mut buf = Vec::new();
        ds.write_jsonl(&mut buf, Some(&serde_json::json!({"seed": 11}))).unwrap();
        let (back, meta) = Dataset::read_jsonl(buf.as_slice()).unwrap();
        assert_eq!(back, ds);
        assert_eq!(meta.unwrap()["seed"], 11);
    }
}
