//! Benchmark harness: runs planners over a task split, tabulates accuracy,
//! timing and relative length, and computes reachability heatmaps.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{lattice_astar, rrt_star, LatticeConfig, PlanResult, PlanStatus, PrimitiveSet, RrtStarConfig};
use crate::geometry::{FreeSpace, Pose2};
use crate::network::{rollout, PlannerModel};
use crate::scenario::{PlanningTask, ScenarioKind};
use crate::task::TaskInput;
use crate::validate::Validator;
use crate::vehicle::{footprint, VehicleParams};

/// A planner under evaluation.
#[derive(Clone)]
pub enum Planner<'m> {
    Neural(&'m PlannerModel),
    Lattice { config: LatticeConfig, primitives: PrimitiveSet },
    RrtStar(RrtStarConfig),
}

impl Planner<'_> {
    pub fn id(&self) -> &'static str {
        match self {
            Planner::Neural(_) => "neural",
            Planner::Lattice { .. } => "lattice",
            Planner::RrtStar(_) => "rrtstar",
        }
    }

    /// Wall-clock budget per call, if the planner has one.
    pub fn budget_s(&self) -> Option<f64> {
        match self {
            Planner::Neural(_) => None,
            Planner::Lattice { config, .. } => Some(config.max_time_s),
            Planner::RrtStar(c) => Some(c.max_time_s),
        }
    }

    pub fn plan(&self, task: &TaskInput, params: &VehicleParams) -> PlanResult {
        match self {
            Planner::Neural(model) => plan_neural(model, task, params),
            Planner::Lattice { config, primitives } => lattice_astar(task, primitives, config, params),
            Planner::RrtStar(config) => rrt_star(task, config, params),
        }
    }
}

/// One network rollout; the reported time covers inference only.
pub fn plan_neural(model: &PlannerModel, task: &TaskInput, params: &VehicleParams) -> PlanResult {
    let started = Instant::now();
    let path = rollout(task, model);
    let time_s = started.elapsed().as_secs_f64();
    let path = path
        .ok()
        .filter(|p| Validator::default().validate(p, &task.fs, &task.q0, &task.qd, params).accepted);
    PlanResult {
        status: if path.is_some() { PlanStatus::Feasible } else { PlanStatus::Infeasible },
        length: path.as_ref().map(|p| p.length()),
        path,
        time_s,
        iterations: 1,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub task: usize,
    pub env_id: u64,
    pub kind: ScenarioKind,
    pub planner: String,
    pub status: PlanStatus,
    /// Wall time in seconds; omitted when timing is disabled.
    pub time_s: Option<f64>,
    pub length: Option<f64>,
    /// Length relative to the lattice planner on the same task, in percent.
    pub length_vs_sl: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    /// Population statistics; `None` for an empty sample.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Self { mean, std: var.sqrt(), n: values.len() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerSummary {
    pub planner: String,
    pub tasks: usize,
    pub feasible: usize,
    pub accuracy: f64,
    pub budget_s: Option<f64>,
    pub time_s: Option<MeanStd>,
    pub length: Option<MeanStd>,
    pub length_vs_sl_percent: Option<MeanStd>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub rows: Vec<EvalRow>,
    pub summary: Vec<PlannerSummary>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Record wall times. Disabled runs produce byte-identical artifacts.
    pub timing: bool,
    /// Plan different tasks concurrently.
    pub parallel: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { timing: true, parallel: false }
    }
}

fn run_one(planner: &Planner, task: &PlanningTask, params: &VehicleParams) -> PlanResult {
    match std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| planner.plan(&task.input, params))) {
        Ok(r) => r,
        Err(_) => {
            log::error!("{} panicked on task in environment {}", planner.id(), task.env_id);
            PlanResult { status: PlanStatus::Infeasible, path: None, time_s: 0.0, length: None, iterations: 0 }
        }
    }
}

/// Runs every planner on every task. Rows are ordered by task, then by
/// planner in the given order.
pub fn evaluate(tasks: &[PlanningTask], planners: &[Planner], params: &VehicleParams, options: EvalOptions) -> Evaluation {
    let per_task = |(i, task): (usize, &PlanningTask)| -> Vec<(usize, PlanResult)> {
        planners
            .iter()
            .enumerate()
            .map(|(k, p)| {
                let r = run_one(p, task, params);
                log::debug!("task {i} {}: {}", p.id(), r.status);
                (k, r)
            })
            .collect()
    };
    let results: Vec<Vec<(usize, PlanResult)>> = if options.parallel {
        tasks.par_iter().enumerate().map(per_task).collect()
    } else {
        tasks.iter().enumerate().map(per_task).collect()
    };
    let sl = planners.iter().position(|p| matches!(p, Planner::Lattice { .. }));
    let mut rows = Vec::with_capacity(tasks.len() * planners.len());
    for (i, (task, res)) in tasks.iter().zip(&results).enumerate() {
        let sl_len = sl.and_then(|k| res[k].1.length);
        for (k, r) in res {
            let length = (r.status == PlanStatus::Feasible).then_some(r.length).flatten();
            rows.push(EvalRow {
                task: i,
                env_id: task.env_id,
                kind: task.kind,
                planner: planners[*k].id().into(),
                status: r.status,
                time_s: options.timing.then_some(r.time_s),
                length,
                length_vs_sl: length.zip(sl_len).map(|(l, s)| 100.0 * l / s),
            });
        }
    }
    let summary = planners
        .iter()
        .map(|p| {
            let mine: Vec<&EvalRow> = rows.iter().filter(|r| r.planner == p.id()).collect();
            let feasible: Vec<&&EvalRow> = mine.iter().filter(|r| r.status == PlanStatus::Feasible).collect();
            let collect = |f: fn(&EvalRow) -> Option<f64>| MeanStd::of(&feasible.iter().filter_map(|r| f(r)).collect::<Vec<_>>());
            PlannerSummary {
                planner: p.id().into(),
                tasks: mine.len(),
                feasible: feasible.len(),
                accuracy: if mine.is_empty() { 0.0 } else { feasible.len() as f64 / mine.len() as f64 },
                budget_s: p.budget_s(),
                time_s: collect(|r| r.time_s),
                length: collect(|r| r.length),
                length_vs_sl_percent: collect(|r| r.length_vs_sl),
            }
        })
        .collect();
    Evaluation { rows, summary }
}

impl Evaluation {
    /// Writes `results.csv`; `meta` lines are emitted first as `# key=value`
    /// comments.
    pub fn write_csv<W: Write>(&self, mut w: W, meta: &[(&str, String)]) -> Result<(), csv::Error> {
        for (k, v) in meta {
            writeln!(w, "# {k}={v}")?;
        }
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["task", "env_id", "kind", "planner", "status", "time_s", "length_m", "length_vs_sl_percent"])?;
        let opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
        for r in &self.rows {
            out.write_record([
                r.task.to_string(),
                r.env_id.to_string(),
                r.kind.to_string(),
                r.planner.clone(),
                r.status.to_string(),
                opt(r.time_s),
                opt(r.length),
                opt(r.length_vs_sl),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Wall-time statistics of repeated neural plans for one task.
pub fn timing_stability(model: &PlannerModel, task: &TaskInput, params: &VehicleParams, calls: usize) -> MeanStd {
    let _ = plan_neural(model, task, params);
    let times: Vec<f64> = (0..calls)
        .map(|_| {
            let started = Instant::now();
            let _ = std::hint::black_box(rollout(task, model));
            started.elapsed().as_secs_f64()
        })
        .collect();
    MeanStd::of(&times).expect("at least one call")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeatmapSpec {
    pub resolution: f64,
    pub orientations: usize,
}

impl Default for HeatmapSpec {
    fn default() -> Self {
        Self { resolution: 0.25, orientations: 36 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatCell {
    pub x: f64,
    pub y: f64,
    pub count: usize,
    /// One character per orientation bin, `1` when feasible.
    pub mask: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub qd: Pose2,
    pub spec: HeatmapSpec,
    pub cells: Vec<HeatCell>,
}

/// For every grid point of `fs`'s bounding box and every orientation bin,
/// plans from that start pose to `qd` and records validator acceptance.
pub fn heatmap(fs: &FreeSpace, qd: &Pose2, spec: &HeatmapSpec, model: &PlannerModel, params: &VehicleParams) -> Heatmap {
    let (lo, hi) = fs.bounding_box();
    let nx = ((hi.x - lo.x) / spec.resolution).floor() as usize;
    let ny = ((hi.y - lo.y) / spec.resolution).floor() as usize;
    let points: Vec<(f64, f64)> = (0..=ny)
        .flat_map(|j| (0..=nx).map(move |i| (lo.x + i as f64 * spec.resolution, lo.y + j as f64 * spec.resolution)))
        .collect();
    let validator = Validator::default();
    let cells = points
        .par_iter()
        .map(|&(x, y)| {
            let mask: String = (0..spec.orientations)
                .map(|k| {
                    let heading = -std::f64::consts::PI + k as f64 * std::f64::consts::TAU / spec.orientations as f64;
                    let q0 = Pose2::new(x, y, heading);
                    let free = footprint(&q0, params).points.iter().all(|&p| fs.contains(p));
                    let task = TaskInput::new(fs.clone(), q0, *qd);
                    let ok = free
                        && rollout(&task, model).is_ok_and(|p| validator.validate(&p, fs, &q0, qd, params).accepted);
                    if ok {
                        '1'
                    } else {
                        '0'
                    }
                })
                .collect();
            HeatCell { x, y, count: mask.bytes().filter(|&b| b == b'1').count(), mask }
        })
        .collect();
    Heatmap { qd: *qd, spec: spec.clone(), cells }
}

impl Heatmap {
    pub fn write_csv<W: Write>(&self, mut w: W, meta: &[(&str, String)]) -> Result<(), csv::Error> {
        for (k, v) in meta {
            writeln!(w, "# {k}={v}")?;
        }
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["x", "y", "count", "mask"])?;
        for c in &self.cells {
            out.write_record([c.x.to_string(), c.y.to_string(), c.count.to_string(), c.mask.clone()])?;
        }
        out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Quadrangle;

    fn straight_task() -> PlanningTask {
        let fs = FreeSpace::new(vec![Quadrangle::rect(-2.0, -4.0, 40.0, 4.0).unwrap()]).unwrap();
        PlanningTask {
            env_id: 0,
            kind: ScenarioKind::Overtaking,
            input: TaskInput::new(fs, Pose2::new(0.0, 0.0, 0.0), Pose2::new(30.0, 0.0, 0.0)),
        }
    }

    #[test]
    fn timed_out_planner_scores_zero() {
        let tasks = vec![straight_task(); 3];
        let rrt = RrtStarConfig { max_iterations: Some(0), ..RrtStarConfig::default() };
        let ev = evaluate(&tasks, &[Planner::RrtStar(rrt)], &VehicleParams::default(), EvalOptions::default());
        assert_eq!(ev.summary[0].accuracy, 0.0);
        assert!(ev.summary[0].time_s.is_none());
        assert!(ev.rows.iter().all(|r| r.status == PlanStatus::Timeout));
    }

    #[test]
    fn neural_rollouts_counted_once_per_task() {
        let model = PlannerModel::zeros();
        let tasks = vec![straight_task(); 4];
        let ev = evaluate(&tasks, &[Planner::Neural(&model)], &VehicleParams::default(), EvalOptions::default());
        assert_eq!(model.evaluations(), 4 * 6);
        assert_eq!(ev.rows.len(), 4);
    }

    #[test]
    fn relative_length_against_lattice() {
        let tasks = vec![straight_task()];
        let planners = [
            Planner::Lattice { config: LatticeConfig::default(), primitives: PrimitiveSet::builtin() },
            Planner::RrtStar(RrtStarConfig { max_iterations: Some(2000), ..RrtStarConfig::default() }),
        ];
        let ev = evaluate(&tasks, &planners, &VehicleParams::default(), EvalOptions { timing: false, parallel: false });
        assert!((ev.rows[0].length_vs_sl.unwrap() - 100.0).abs() < 1e-9);
        assert!(ev.rows[1].length_vs_sl.unwrap() >= 100.0 - 1e-6);
        let mut a = Vec::new();
        ev.write_csv(&mut a, &[("seed", "1".into())]).unwrap();
        let text = String::from_utf8(a).unwrap();
        assert!(text.starts_with("# seed=1\ntask,env_id,kind,planner,status,time_s,"));
    }

    #[test]
    fn heatmap_zero_where_footprint_collides() {
        let fs = FreeSpace::new(vec![Quadrangle::rect(0.0, -3.0, 60.0, 3.0).unwrap()]).unwrap();
        let spec = HeatmapSpec { resolution: 2.0, orientations: 4 };
        let hm = heatmap(&fs, &Pose2::new(55.0, 0.0, 0.0), &spec, &PlannerModel::zeros(), &VehicleParams::default());
        for c in &hm.cells {
            if c.x < 0.67 || c.y.abs() > 2.1 {
                assert_eq!(c.count, 0, "{c:?}");
            }
        }
        assert!(hm.cells.iter().any(|c| c.count > 0));
    }
}
