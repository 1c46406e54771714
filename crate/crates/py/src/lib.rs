//! Python module `kinoplan`. Tasks, paths and results cross the boundary
//! as JSON strings in the same formats the command-line tool reads and
//! writes.

use kinoplan_core::baselines::{LatticeConfig, PrimitiveSet, RrtStarConfig};
use kinoplan_core::dubins::dubins_shortest;
use kinoplan_core::evaluate::Planner;
use kinoplan_core::geometry::Pose2;
use kinoplan_core::network::PlannerModel;
use kinoplan_core::scenario::{generate_dataset as generate, DatasetCounts, GenerateConfig, ScenarioKind, TemplateSet};
use kinoplan_core::selftest::{continuity_suite, equivalence_suite, gradient_suite, invariance_suite};
use kinoplan_core::spline::PathSpline;
use kinoplan_core::task::TaskInput;
use kinoplan_core::validate::validate_path;
use kinoplan_core::vehicle::VehicleParams;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use serde_json::json;

/// Interpreter-independent implementations, callable from Rust tests.
pub mod api {
    use super::*;

    fn parse_task(task_json: &str) -> Result<TaskInput, String> {
        serde_json::from_str(task_json).map_err(|e| format!("task: {e}"))
    }

    pub fn generate_dataset(counts: [usize; 3], seed: u64, kinds: Option<Vec<String>>) -> Result<String, String> {
        let kinds = match kinds {
            None => ScenarioKind::ALL.to_vec(),
            Some(names) => names
                .iter()
                .map(|n| ScenarioKind::ALL.into_iter().find(|k| k.name() == n).ok_or(format!("unknown kind `{n}`")))
                .collect::<Result<_, _>>()?,
        };
        let config = GenerateConfig { kinds, ..Default::default() };
        let counts = DatasetCounts { train: counts[0], val: counts[1], test: counts[2] };
        let ds = generate(counts, seed, &config, &TemplateSet::builtin(), &VehicleParams::default()).map_err(|e| e.to_string())?;
        let mut out = Vec::new();
        ds.write_jsonl(&mut out, Some(&json!({ "seed": seed }))).map_err(|e| e.to_string())?;
        String::from_utf8(out).map_err(|e| e.to_string())
    }

    /// Plans one task; the result JSON has `status`, `length`, `time_s`,
    /// `iterations` and `path`.
    pub fn plan(task_json: &str, planner: &str, model: Option<&PlannerModel>, seed: u64, budget: Option<f64>) -> Result<String, String> {
        let task = parse_task(task_json)?;
        if budget.is_some_and(|b| !(b > 0.0)) {
            return Err("budget must be positive".into());
        }
        let planner = match planner {
            "neural" => Planner::Neural(model.ok_or("the neural planner needs a model")?),
            "lattice" => {
                let mut config = LatticeConfig::default();
                config.max_time_s = budget.unwrap_or(config.max_time_s);
                Planner::Lattice { config, primitives: PrimitiveSet::builtin() }
            }
            "rrtstar" => {
                let mut config = RrtStarConfig { seed, ..Default::default() };
                config.max_time_s = budget.unwrap_or(config.max_time_s);
                Planner::RrtStar(config)
            }
            other => return Err(format!("unknown planner `{other}`")),
        };
        let r = planner.plan(&task, &VehicleParams::default());
        Ok(json!({
            "status": r.status,
            "length": r.length,
            "time_s": r.time_s,
            "iterations": r.iterations,
            "path": r.path,
        })
        .to_string())
    }

    /// Validator report for a path against a task, as JSON.
    pub fn validate(path_json: &str, task_json: &str) -> Result<String, String> {
        let task = parse_task(task_json)?;
        let path: PathSpline = serde_json::from_str(path_json).map_err(|e| format!("path: {e}"))?;
        let report = validate_path(&path, &task.fs, &task.q0, &task.qd, &VehicleParams::default());
        serde_json::to_string(&report).map_err(|e| e.to_string())
    }

    pub fn dubins_length(q0: [f64; 3], qd: [f64; 3], radius: Option<f64>) -> Result<f64, String> {
        let radius = radius.unwrap_or_else(|| VehicleParams::default().min_turn_radius());
        if !(radius > 0.0) {
            return Err("radius must be positive".into());
        }
        Ok(dubins_shortest(&Pose2::from(q0), &Pose2::from(qd), radius).1)
    }

    /// Runs the built-in suites; returns overall success and one line per suite.
    pub fn selftest(quick: bool, seed: u64) -> (bool, Vec<String>) {
        let params = VehicleParams::default();
        let (g, c, i, e) = if quick { (5, 100, 10, 40) } else { (50, 1000, 100, 200) };
        let mut reports = gradient_suite(g, seed, &params);
        reports.extend(continuity_suite(c, seed));
        reports.extend(invariance_suite(i, seed, &params));
        reports.push(equivalence_suite(e, seed, &params).0);
        (reports.iter().all(|r| r.passed()), reports.iter().map(|r| r.to_string()).collect())
    }
}

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Trained or freshly initialized network weights.
#[pyclass(name = "Model", module = "kinoplan")]
struct Model {
    inner: PlannerModel,
}

#[pymethods]
impl Model {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        PlannerModel::load(std::path::Path::new(path)).map(|inner| Self { inner }).map_err(value_err)
    }

    #[staticmethod]
    fn init(seed: u64) -> Self {
        Self { inner: PlannerModel::init(seed) }
    }

    #[staticmethod]
    fn zeros() -> Self {
        Self { inner: PlannerModel::zeros() }
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(std::path::Path::new(path), serde_json::Value::Null).map_err(value_err)
    }

    /// Network evaluations performed by this model so far.
    #[getter]
    fn evaluations(&self) -> u64 {
        self.inner.evaluations()
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.params.len()
    }

    fn plan(&self, py: Python<'_>, task_json: &str) -> PyResult<String> {
        py.detach(|| api::plan(task_json, "neural", Some(&self.inner), 0, None)).map_err(value_err)
    }
}

/// Generates a dataset and returns it as JSON lines.
#[pyfunction]
#[pyo3(signature = (train, val, test, seed = 0, kinds = None))]
fn generate_dataset(py: Python<'_>, train: usize, val: usize, test: usize, seed: u64, kinds: Option<Vec<String>>) -> PyResult<String> {
    py.detach(|| api::generate_dataset([train, val, test], seed, kinds)).map_err(value_err)
}

/// Plans a task given as JSON with `lattice`, `rrtstar` or `neural` (which
/// needs `model`).
#[pyfunction]
#[pyo3(signature = (task_json, planner = "lattice", model = None, seed = 0, budget = None))]
fn plan(py: Python<'_>, task_json: &str, planner: &str, model: Option<PyRef<'_, Model>>, seed: u64, budget: Option<f64>) -> PyResult<String> {
    let model = model.as_ref().map(|m| &m.inner);
    py.detach(|| api::plan(task_json, planner, model, seed, budget)).map_err(value_err)
}

#[pyfunction]
fn validate(path_json: &str, task_json: &str) -> PyResult<String> {
    api::validate(path_json, task_json).map_err(value_err)
}

#[pyfunction]
#[pyo3(signature = (q0, qd, radius = None))]
fn dubins_length(q0: [f64; 3], qd: [f64; 3], radius: Option<f64>) -> PyResult<f64> {
    api::dubins_length(q0, qd, radius).map_err(value_err)
}

/// Runs the built-in numerical suites and returns `(passed, lines)`.
#[pyfunction]
#[pyo3(signature = (quick = true, seed = 0))]
fn selftest(py: Python<'_>, quick: bool, seed: u64) -> (bool, Vec<String>) {
    py.detach(|| api::selftest(quick, seed))
}

#[pymodule]
fn kinoplan(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(plan, m)?)?;
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    m.add_function(wrap_pyfunction!(dubins_length, m)?)?;
    m.add_function(wrap_pyfunction!(selftest, m)?)?;
    Ok(())
}
