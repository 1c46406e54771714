//! End-to-end acceptance checks. Every criterion prints one PASS/FAIL line
//! (written straight to stderr so it shows up without `--nocapture`), and
//! the test fails if any criterion does.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};
use std::f64::consts::{PI, TAU};
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use kinoplan::baselines::{lattice_astar, rrt_star, Lattice, LatticeConfig, Node, PlanStatus, PrimitiveSet, RrtStarConfig};
use kinoplan::dubins::dubins_shortest;
use kinoplan::evaluate::{evaluate, plan_neural, timing_stability, EvalOptions, Planner};
use kinoplan::geometry::{FreeSpace, Pose2, Quadrangle};
use kinoplan::network::PlannerModel;
use kinoplan::scenario::{generate_dataset, Dataset, DatasetCounts, GenerateConfig, ScenarioKind, TemplateSet};
use kinoplan::selftest::{continuity_suite, equivalence_suite, gradient_suite, invariance_suite, SuiteReport};
use kinoplan::task::TaskInput;
use kinoplan::trainer::{train, TrainConfig};
use kinoplan::validate::validate_path;
use kinoplan::vehicle::VehicleParams;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn line(text: &str) {
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "{text}");
}

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

fn criterion(id: u32, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let started = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Outcome::new(false, format!("panicked: {msg}"))
    });
    line(&format!(
        "[{}] criterion {id:>2} {name}: {} ({:.1} s)",
        if outcome.pass { "PASS" } else { "FAIL" },
        outcome.detail,
        started.elapsed().as_secs_f64()
    ));
    outcome.pass
}

fn suites_outcome(reports: &[SuiteReport]) -> Outcome {
    for r in reports {
        line(&format!("      {r}"));
    }
    let pass = reports.iter().all(SuiteReport::passed);
    let worst = reports.iter().map(|r| r.worst).fold(0.0, f64::max);
    let cases: usize = reports.iter().map(|r| r.cases).sum();
    Outcome::new(pass, format!("{} suites, {cases} cases, worst {worst:.2e}", reports.len()))
}

fn c1_gradients(params: &VehicleParams) -> Outcome {
    let started = Instant::now();
    let reports = gradient_suite(50, 1, params);
    let secs = started.elapsed().as_secs_f64();
    let enough = reports.iter().all(|r| r.cases >= 50);
    let mut o = suites_outcome(&reports);
    o.pass &= enough && secs < 120.0;
    o.detail = format!("{}; runtime {secs:.1} s (limit 120 s)", o.detail);
    o
}

fn c2_continuity() -> Outcome {
    suites_outcome(&continuity_suite(1000, 2))
}

fn c3_equivalence(params: &VehicleParams) -> Outcome {
    let (report, accepted) = equivalence_suite(200, 3, params);
    line(&format!("      {report}"));
    let mixed = accepted > 0 && accepted < report.cases;
    Outcome::new(
        report.passed() && mixed && report.cases >= 200,
        format!("{} paths ({accepted} accepted), {} disagreements", report.cases, report.failures),
    )
}

fn c4_invariance(params: &VehicleParams) -> Outcome {
    suites_outcome(&invariance_suite(100, 4, params))
}

/// Shortest forward path with curvature in {-1, 0, 1} (unit radius) and at
/// most two switches, found by sweeping the first switching time on a grid
/// of step `delta`. The remaining two switching times follow from tangency
/// with the goal's turning circle; grid points whose tangency residual
/// exceeds `tol` are discarded.
fn bang_bang_search(q0: &Pose2, qd: &Pose2, delta: f64, tol: f64) -> f64 {
    #[derive(Clone, Copy, PartialEq)]
    enum Turn {
        Left,
        Right,
    }
    let center = |x: f64, y: f64, th: f64, t: Turn| match t {
        Turn::Left => (x - th.sin(), y + th.cos()),
        Turn::Right => (x + th.sin(), y - th.cos()),
    };
    let sweep = |from: f64, to: f64, t: Turn| match t {
        Turn::Left => (to - from).rem_euclid(TAU),
        Turn::Right => (from - to).rem_euclid(TAU),
    };
    let heading_on = |cx: f64, cy: f64, px: f64, py: f64, t: Turn| match t {
        Turn::Left => (py - cy).atan2(px - cx) + PI / 2.0,
        Turn::Right => (py - cy).atan2(px - cx) - PI / 2.0,
    };
    let (gx, gy, gth) = (qd.x(), qd.y(), qd.heading);
    let mut best = f64::INFINITY;
    let steps = (TAU / delta).ceil() as usize;
    for t1 in [Turn::Left, Turn::Right] {
        let (c1x, c1y) = center(q0.x(), q0.y(), q0.heading, t1);
        for k in 0..steps {
            let a = k as f64 * delta;
            let th1 = match t1 {
                Turn::Left => q0.heading + a,
                Turn::Right => q0.heading - a,
            };
            let (p1x, p1y) = match t1 {
                Turn::Left => (c1x + th1.sin(), c1y - th1.cos()),
                Turn::Right => (c1x - th1.sin(), c1y + th1.cos()),
            };
            for t3 in [Turn::Left, Turn::Right] {
                let (c3x, c3y) = center(gx, gy, gth, t3);
                // Straight middle: leave p1 along th1 and touch the goal circle.
                let (tx, ty) = match t3 {
                    Turn::Left => (c3x + th1.sin(), c3y - th1.cos()),
                    Turn::Right => (c3x - th1.sin(), c3y + th1.cos()),
                };
                let (dx, dy) = (tx - p1x, ty - p1y);
                let b = dx * th1.cos() + dy * th1.sin();
                let miss = (dy * th1.cos() - dx * th1.sin()).abs();
                if b >= 0.0 && miss <= tol {
                    best = best.min(a + b + sweep(th1, gth, t3));
                }
                // Arc middle, turning against both outer arcs.
                if t3 == t1 {
                    let t2 = if t1 == Turn::Left { Turn::Right } else { Turn::Left };
                    let (c2x, c2y) = center(p1x, p1y, th1, t2);
                    let gap = ((c3x - c2x).hypot(c3y - c2y) - 2.0).abs();
                    if gap <= tol {
                        let (mx, my) = ((c2x + c3x) / 2.0, (c2y + c3y) / 2.0);
                        let thm = heading_on(c2x, c2y, mx, my, t2);
                        best = best.min(a + sweep(th1, thm, t2) + sweep(thm, gth, t3));
                    }
                }
            }
        }
    }
    best
}

fn c5_dubins() -> Outcome {
    let radius = 1.0 / VehicleParams::default().kappa_max;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let delta = 1e-5;
    let mut worst_excess = 0.0f64;
    let mut failures = 0;
    for _ in 0..50 {
        let q0 = Pose2::new(rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0), rng.gen_range(-PI..PI));
        let qd = Pose2::new(rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0), rng.gen_range(-PI..PI));
        let (_, length) = dubins_shortest(&q0, &qd, radius);
        // Work in units of the turning radius.
        let scale = |p: &Pose2| Pose2::new(p.x() / radius, p.y() / radius, p.heading);
        let d = q0.position.dist(qd.position) / radius;
        // Residual of the nearest grid point to the optimum: each switching
        // time moves the end point by at most (remaining length + 2) per unit.
        let tol = delta * (d + 4.0 * PI + 2.0);
        let brute = bang_bang_search(&scale(&q0), &scale(&qd), delta, tol) * radius;
        // Discretization bound: 2 delta of arc length from rounding the
        // switching times plus the accepted residual on either side.
        let bound = (2.0 * delta + 2.0 * tol) * radius;
        let excess = (brute - length).abs();
        worst_excess = worst_excess.max(excess / bound);
        if !(excess <= bound) {
            failures += 1;
            line(&format!("      mismatch: dubins {length:.6} brute force {brute:.6} bound {bound:.2e}"));
        }
    }
    let (_, straight) = dubins_shortest(&Pose2::new(1.0, 2.0, 0.3), &Pose2::new(1.0 + 9.0 * 0.3f64.cos(), 2.0 + 9.0 * 0.3f64.sin(), 0.3), radius);
    let straight_exact = (straight - 9.0).abs() <= 1e-12;
    Outcome::new(
        failures == 0 && straight_exact,
        format!(
            "50 pairs, {failures} outside the bound (worst {:.2} of bound); collinear length error {:.1e}",
            worst_excess,
            (straight - 9.0).abs()
        ),
    )
}

struct Trained {
    model: PlannerModel,
    dataset: Dataset,
}

fn desk_dataset(params: &VehicleParams) -> Dataset {
    let config = GenerateConfig { kinds: vec![ScenarioKind::Overtaking], ..Default::default() };
    generate_dataset(DatasetCounts { train: 600, val: 150, test: 100 }, 1, &config, &TemplateSet::builtin(), params)
        .expect("desk dataset generates")
}

fn desk_train_config() -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-4,
        batch_size: 64,
        curriculum: vec![ScenarioKind::Overtaking],
        epochs_per_stage: 50,
        pretrain_max_steps: 20,
        ..Default::default()
    }
}

fn c6_training(params: &VehicleParams, out: &mut Option<Trained>) -> Outcome {
    let started = Instant::now();
    let dataset = desk_dataset(params);
    let gen_s = started.elapsed().as_secs_f64();
    let (model, report) = train(&dataset, &desk_train_config(), params, &mut ()).expect("training runs");
    let secs = started.elapsed().as_secs_f64();
    let best = report.best_val_accuracy.unwrap_or(0.0);
    let epoch = report.best_epoch.map_or("-".into(), |e| e.to_string());
    let last = report.epochs.last().map_or(0.0, |e| e.val_accuracy);
    *out = Some(Trained { model, dataset });
    Outcome::new(
        best >= 0.6 && report.epochs.len() <= 50 && secs < 7200.0,
        format!(
            "best validation accuracy {best:.3} at epoch {epoch} of {} (need 0.600), final epoch {last:.3}; generation {gen_s:.0} s, total {secs:.0} s",
            report.epochs.len()
        ),
    )
}

fn c7_constancy(params: &VehicleParams, trained: &Trained) -> Outcome {
    let model = &trained.model;
    let mut wrong = 0;
    for task in &trained.dataset.test {
        let before = model.evaluations();
        let _ = plan_neural(model, &task.input, params);
        if model.evaluations() - before != 6 {
            wrong += 1;
        }
    }
    let stats = timing_stability(model, &trained.dataset.test[0].input, params, 100);
    let cv = stats.std / stats.mean;
    Outcome::new(
        wrong == 0 && cv < 0.2,
        format!(
            "{} plans, {wrong} with an evaluation count other than 6; {:.2} +- {:.2} ms per call, CV {:.1}% (limit 20%)",
            trained.dataset.test.len(),
            stats.mean * 1e3,
            stats.std * 1e3,
            cv * 100.0
        ),
    )
}

fn c8_relative_length(params: &VehicleParams, trained: &Trained) -> Outcome {
    let planners = [
        Planner::Neural(&trained.model),
        Planner::Lattice { config: LatticeConfig::default(), primitives: PrimitiveSet::builtin() },
    ];
    let eval = evaluate(&trained.dataset.test, &planners, params, EvalOptions { timing: false, parallel: false });
    let ratios: Vec<f64> = eval
        .rows
        .iter()
        .filter(|r| r.planner == "neural")
        .filter_map(|r| r.length_vs_sl)
        .collect();
    let solved = |p: &str| eval.rows.iter().filter(|r| r.planner == p && r.status == PlanStatus::Feasible).count();
    let mean = ratios.iter().sum::<f64>() / ratios.len().max(1) as f64;
    Outcome::new(
        !ratios.is_empty() && mean <= 115.0,
        format!(
            "neural solves {}/{n}, lattice {}/{n}, both {}; mean neural length {mean:.1}% of lattice (limit 115%)",
            solved("neural"),
            solved("lattice"),
            ratios.len(),
            n = trained.dataset.test.len()
        ),
    )
}

#[derive(Clone, Copy, PartialEq)]
struct Cost(f64);

impl Eq for Cost {}

impl PartialOrd for Cost {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Cost {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Uniform-cost search over the same lattice graph, without a heuristic.
fn dijkstra(lattice: &Lattice) -> Option<f64> {
    let mut dist: HashMap<Node, f64> = HashMap::new();
    let mut heap = BinaryHeap::new();
    dist.insert(Node::Start, 0.0);
    heap.push(Reverse((Cost(0.0), Node::Start)));
    while let Some(Reverse((Cost(d), node))) = heap.pop() {
        if node == Node::Goal {
            return Some(d);
        }
        if d > dist[&node] {
            continue;
        }
        for (next, cost, _) in lattice.successors(node) {
            let nd = d + cost;
            if dist.get(&next).is_none_or(|&old| nd < old) {
                dist.insert(next, nd);
                heap.push(Reverse((Cost(nd), next)));
            }
        }
    }
    None
}

fn c9_baselines(params: &VehicleParams) -> Outcome {
    let small = GenerateConfig { kinds: ScenarioKind::ALL.to_vec(), tasks_per_env: 1, ..Default::default() };
    let tasks = generate_dataset(DatasetCounts { train: 0, val: 0, test: 6 }, 9, &small, &TemplateSet::builtin(), params)
        .expect("tasks generate")
        .test;
    let config = LatticeConfig { resolution: 0.5, ..Default::default() };
    let prims = PrimitiveSet::builtin();
    let mut oracle_mismatch = 0;
    let mut oracle_solved = 0;
    let mut invalid = 0;
    for t in &tasks {
        let astar = lattice_astar(&t.input, &prims, &config, params);
        let oracle = dijkstra(&Lattice::new(&t.input, &prims, &config, params));
        match (&astar.path, oracle) {
            (Some(path), Some(cost)) => {
                oracle_solved += 1;
                if (path.length() - cost).abs() > 1e-6 * cost.max(1.0) {
                    oracle_mismatch += 1;
                    line(&format!("      lattice {:.6} vs oracle {cost:.6}", path.length()));
                }
                if !validate_path(path, &t.input.fs, &t.input.q0, &t.input.qd, params).accepted {
                    invalid += 1;
                }
            }
            (None, None) => {}
            _ => {
                oracle_mismatch += 1;
                line(&format!("      lattice {:?} but oracle {:?}", astar.status, oracle));
            }
        }
    }

    let fs = FreeSpace::new(vec![Quadrangle::rect(0.0, 0.0, 40.0, 40.0).unwrap()]).unwrap();
    let mut rrt_ok = 0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let task = loop {
            let q0 = Pose2::new(rng.gen_range(8.0..32.0), rng.gen_range(8.0..32.0), rng.gen_range(-PI..PI));
            let qd = Pose2::new(rng.gen_range(8.0..32.0), rng.gen_range(8.0..32.0), rng.gen_range(-PI..PI));
            let task = TaskInput::new(fs.clone(), q0, qd);
            if q0.position.dist(qd.position) >= 10.0 && task.endpoints_free(params) {
                break task;
            }
        };
        let r = rrt_star(&task, &RrtStarConfig { max_time_s: 10.0, seed, ..Default::default() }, params);
        if let Some(path) = &r.path {
            if validate_path(path, &task.fs, &task.q0, &task.qd, params).accepted && r.time_s <= 10.0 {
                rrt_ok += 1;
            } else {
                invalid += 1;
            }
        }
    }
    Outcome::new(
        oracle_mismatch == 0 && oracle_solved > 0 && rrt_ok >= 16 && invalid == 0,
        format!(
            "lattice matches the uniform-cost oracle on {}/{} tasks ({oracle_solved} solvable); RRT* solved {rrt_ok}/20 open-space trials in 10 s (need 16); {invalid} outputs rejected by the validator",
            tasks.len() - oracle_mismatch,
            tasks.len()
        ),
    )
}

fn c10_determinism(params: &VehicleParams) -> Outcome {
    let gen = || {
        let config = GenerateConfig { tasks_per_env: 2, ..Default::default() };
        let ds = generate_dataset(DatasetCounts { train: 8, val: 4, test: 4 }, 10, &config, &TemplateSet::builtin(), params)
            .expect("dataset generates");
        let mut bytes = Vec::new();
        ds.write_jsonl(&mut bytes, Some(&serde_json::json!({ "seed": 10 }))).unwrap();
        (ds, bytes)
    };
    let (ds, gen_a) = gen();
    let generate_same = gen_a == gen().1;

    let config = TrainConfig { batch_size: 4, epochs_per_stage: 1, pretrain_max_steps: 2, seed: 10, ..Default::default() };
    let trained = || {
        let (model, _) = train(&ds, &config, params, &mut ()).expect("training runs");
        (serde_json::to_vec(&model.checkpoint()).unwrap(), model)
    };
    let (ck_a, model) = trained();
    let train_same = ck_a == trained().0;

    let planners = [
        Planner::Neural(&model),
        Planner::Lattice { config: LatticeConfig::default(), primitives: PrimitiveSet::builtin() },
        Planner::RrtStar(RrtStarConfig { seed: 10, max_iterations: Some(2000), ..Default::default() }),
    ];
    let plans = || -> Vec<u8> {
        let mut out = Vec::new();
        for t in &ds.test {
            for p in &planners {
                let r = p.plan(&t.input, params);
                out.extend(serde_json::to_vec(&(r.status, r.path, r.iterations)).unwrap());
            }
        }
        out
    };
    let plan_same = plans() == plans();

    let options = EvalOptions { timing: false, parallel: false };
    let eval_csv = || {
        let mut out = Vec::new();
        evaluate(&ds.test, &planners, params, options).write_csv(&mut out, &[("seed", "10".into())]).unwrap();
        out
    };
    let eval_same = eval_csv() == eval_csv();

    Outcome::new(
        generate_same && train_same && plan_same && eval_same,
        format!("identical reruns: generate {generate_same}, train {train_same}, plan {plan_same}, evaluate {eval_same}"),
    )
}

#[test]
fn acceptance_criteria() {
    let params = VehicleParams::default();
    let mut results = Vec::new();
    results.push(criterion(1, "gradient suite", || c1_gradients(&params)));
    results.push(criterion(2, "spline continuity", c2_continuity));
    results.push(criterion(3, "loss/validator equivalence", || c3_equivalence(&params)));
    results.push(criterion(4, "invariance suite", || c4_invariance(&params)));
    results.push(criterion(5, "Dubins vs bang-bang search", c5_dubins));
    let mut trained = None;
    results.push(criterion(6, "desk-scale training", || c6_training(&params, &mut trained)));
    match &trained {
        Some(t) => {
            results.push(criterion(7, "inference constancy", || c7_constancy(&params, t)));
            results.push(criterion(8, "relative length vs lattice", || c8_relative_length(&params, t)));
        }
        None => {
            results.push(criterion(7, "inference constancy", || Outcome::new(false, "no trained model")));
            results.push(criterion(8, "relative length vs lattice", || Outcome::new(false, "no trained model")));
        }
    }
    results.push(criterion(9, "baseline sanity", || c9_baselines(&params)));
    results.push(criterion(10, "determinism", || c10_determinism(&params)));
    let passed = results.iter().filter(|&&p| p).count();
    line(&format!("acceptance: {passed}/{} criteria passed", results.len()));
    assert_eq!(passed, results.len(), "acceptance criteria failed");
}
