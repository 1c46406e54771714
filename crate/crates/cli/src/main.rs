mod config;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use kinoplan::baselines::{PlanStatus, PrimitiveSet};
use kinoplan::evaluate::{evaluate, heatmap, EvalOptions, Planner};
use kinoplan::network::PlannerModel;
use kinoplan::scenario::{generate_dataset, Dataset, PlanningTask, ScenarioKind, Split, TemplateSet};
use kinoplan::selftest::{continuity_suite, equivalence_suite, gradient_suite, invariance_suite, SuiteReport};
use kinoplan::task::TaskInput;
use kinoplan::trainer::{train, EpochRecord, JsonlMetrics, StepRecord, TrainError, TrainObserver};
use serde_json::{json, Value};

use crate::config::Config;

#[derive(Parser)]
#[command(name = "kinoplan", version, about = "Neural and classical path planning for car-like vehicles")]
struct Cli {
    /// JSON configuration file; omitted fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file (or directory for `evaluate`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Leave wall times out of outputs so reruns are byte-identical.
    #[arg(long, global = true)]
    no_timing: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset of planning tasks as JSON lines.
    Generate(GenerateArgs),
    /// Train the neural planner and write the best checkpoint.
    Train(TrainArgs),
    /// Plan one task and print the path as JSON.
    Plan(PlanArgs),
    /// Benchmark planners on a dataset split.
    Evaluate(EvaluateArgs),
    /// Feasibility heatmap of start poses for one goal.
    Heatmap(HeatmapArgs),
    /// Run the gradient, continuity, invariance and equivalence suites.
    Selftest(SelftestArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Task counts as TRAIN,VAL,TEST.
    #[arg(long, value_parser = parse_counts)]
    counts: Option<[usize; 3]>,
    /// Scenario kinds, comma separated.
    #[arg(long, value_delimiter = ',')]
    kinds: Option<Vec<String>>,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset written by `generate`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    pretrain_steps: Option<usize>,
    /// Per-step loss records as JSON lines.
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PlannerKind {
    Neural,
    Lattice,
    Rrtstar,
}

#[derive(Args)]
struct TaskSource {
    /// A task as JSON (`quads`, `q0`, `qd`), or a dataset in JSON lines.
    #[arg(long)]
    task_file: PathBuf,
    /// Task index when `--task-file` is a dataset.
    #[arg(long, default_value_t = 0)]
    index: usize,
    /// Split to index into when `--task-file` is a dataset.
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    split: SplitArg,
}

#[derive(Args)]
struct PlanArgs {
    #[command(flatten)]
    task: TaskSource,
    #[arg(long, value_enum, default_value_t = PlannerKind::Neural)]
    planner: PlannerKind,
    /// Checkpoint; required for the neural planner.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Time budget in seconds for the classical planners.
    #[arg(long)]
    budget: Option<f64>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    split: SplitArg,
    /// Required when the neural planner is evaluated.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Planners to run, comma separated; overrides the config.
    #[arg(long, value_delimiter = ',')]
    planners: Option<Vec<String>>,
    /// Time budget in seconds for the classical planners.
    #[arg(long)]
    budget: Option<f64>,
    /// Only the first N tasks of the split.
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    parallel: bool,
}

#[derive(Args)]
struct HeatmapArgs {
    /// Goal pose and free space are taken from this task.
    #[command(flatten)]
    task: TaskSource,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    resolution: Option<f64>,
    #[arg(long)]
    orientations: Option<usize>,
}

#[derive(Args)]
struct SelftestArgs {
    /// Smaller case counts for a quick check.
    #[arg(long)]
    quick: bool,
}

fn parse_counts(s: &str) -> Result<[usize; 3], String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err("expected TRAIN,VAL,TEST".into());
    }
    let mut out = [0; 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.trim().parse().map_err(|e| format!("`{p}`: {e}"))?;
    }
    Ok(out)
}

/// Failure classes mapped to exit codes.
enum Failure {
    /// Bad flags, config or input files.
    Usage(anyhow::Error),
    /// The command ran but did not succeed.
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

trait UsageContext<T> {
    fn usage(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> UsageContext<T> for Result<T, E> {
    fn usage(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Usage(e.into()))
    }
}

struct Run {
    config: Config,
    out: Option<PathBuf>,
    timing: bool,
}

impl Run {
    fn meta(&self, command: &str) -> Value {
        json!({
            "tool": "kinoplan",
            "version": env!("CARGO_PKG_VERSION"),
            "command": command,
            "config_hash": self.config.hash(),
            "seed": self.config.seed,
        })
    }

    fn meta_pairs(&self, command: &str) -> Vec<(&'static str, String)> {
        vec![
            ("tool", "kinoplan".into()),
            ("version", env!("CARGO_PKG_VERSION").into()),
            ("command", command.into()),
            ("config_hash", self.config.hash()),
            ("seed", self.config.seed.to_string()),
        ]
    }

    fn out_or(&self, default: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(default))
    }
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn write_json(path: &Path, value: &Value) -> anyhow::Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn read_dataset(path: &Path) -> Result<(Dataset, Option<Value>), Failure> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display())).usage()?;
    Dataset::read_jsonl(BufReader::new(f)).with_context(|| format!("reading {}", path.display())).usage()
}

fn load_model(path: Option<&Path>) -> Result<PlannerModel, Failure> {
    let path = path.context("--model is required for the neural planner").usage()?;
    PlannerModel::load(path).with_context(|| format!("loading model {}", path.display())).usage()
}

fn load_task(src: &TaskSource) -> Result<TaskInput, Failure> {
    let path = &src.task_file;
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).usage()?;
    let single: Result<TaskInput, _> = serde_json::from_str(&text);
    match single {
        Ok(t) => Ok(t),
        Err(single_err) => {
            let (ds, _) = Dataset::read_jsonl(text.as_bytes())
                .map_err(|_| anyhow::anyhow!("{}: not a task or dataset: {single_err}", path.display()))
                .usage()?;
            let split = ds.split(src.split.into());
            split
                .get(src.index)
                .map(|t| t.input.clone())
                .with_context(|| format!("{}: task index {} out of range ({} tasks)", path.display(), src.index, split.len()))
                .usage()
        }
    }
}

fn parse_kind(s: &str) -> anyhow::Result<ScenarioKind> {
    ScenarioKind::ALL
        .into_iter()
        .find(|k| k.name() == s)
        .with_context(|| format!("unknown scenario kind `{s}`"))
}

fn cmd_generate(run: &mut Run, args: &GenerateArgs) -> Result<ExitCode, Failure> {
    if let Some([train, val, test]) = args.counts {
        let g = &mut run.config.generate;
        (g.train, g.val, g.test) = (train, val, test);
    }
    if let Some(kinds) = &args.kinds {
        run.config.generate.kinds = kinds.iter().map(|k| parse_kind(k)).collect::<anyhow::Result<_>>().usage()?;
    }
    run.config.check().usage()?;
    let c = &run.config;
    let ds = generate_dataset(c.generate.counts(), c.seed, &c.generate.generate_config(), &TemplateSet::builtin(), &c.vehicle)
        .context("generating dataset")?;
    let path = run.out_or("dataset.jsonl");
    let mut w = create(&path)?;
    let mut meta = run.meta("generate");
    meta["generate"] = serde_json::to_value(&c.generate).expect("serializable");
    ds.write_jsonl(&mut w, Some(&meta)).context("writing dataset")?;
    w.flush().context("writing dataset")?;
    log::info!("wrote {} tasks to {}", ds.len(), path.display());
    Ok(ExitCode::SUCCESS)
}

struct Progress<'a> {
    metrics: Option<JsonlMetrics<BufWriter<File>>>,
    epochs: &'a mut Vec<EpochRecord>,
}

impl TrainObserver for Progress<'_> {
    fn step(&mut self, rec: &StepRecord) -> Result<(), TrainError> {
        match &mut self.metrics {
            Some(m) => m.step(rec),
            None => Ok(()),
        }
    }

    fn epoch(&mut self, rec: &EpochRecord, _model: &PlannerModel) -> Result<(), TrainError> {
        log::info!(
            "epoch {} (stage {}): train {:.3}, val {:.3}",
            rec.id,
            rec.stage,
            rec.train_accuracy,
            rec.val_accuracy
        );
        self.epochs.push(rec.clone());
        Ok(())
    }
}

fn cmd_train(run: &mut Run, args: &TrainArgs) -> Result<ExitCode, Failure> {
    if let Some(e) = args.epochs {
        run.config.train.epochs_per_stage = e;
    }
    if let Some(p) = args.pretrain_steps {
        run.config.train.pretrain_max_steps = p;
    }
    run.config.check().usage()?;
    let (ds, data_meta) = read_dataset(&args.data)?;
    let metrics = match &args.metrics {
        Some(p) => Some(JsonlMetrics(create(p)?)),
        None => None,
    };
    let mut epochs = Vec::new();
    let mut obs = Progress { metrics, epochs: &mut epochs };
    let (model, report) = train(&ds, &run.config.train, &run.config.vehicle, &mut obs).context("training")?;
    if let Some(m) = &mut obs.metrics {
        m.0.flush().context("writing metrics")?;
    }
    let mut meta = run.meta("train");
    meta["dataset"] = data_meta.unwrap_or(Value::Null);
    meta["train"] = serde_json::to_value(&run.config.train).expect("serializable");
    meta["best_epoch"] = json!(report.best_epoch);
    meta["best_val_accuracy"] = json!(report.best_val_accuracy);
    let path = run.out_or("model.json");
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).context("creating output directory")?;
    }
    model.save(&path, meta.clone()).with_context(|| format!("writing {}", path.display()))?;
    let report_path = path.with_extension("report.json");
    write_json(&report_path, &json!({ "meta": meta, "report": report }))?;
    println!(
        "{}",
        json!({ "checkpoint": path, "report": report_path, "best_epoch": report.best_epoch, "best_val_accuracy": report.best_val_accuracy })
    );
    Ok(ExitCode::SUCCESS)
}

fn build_planner<'m>(run: &Run, kind: &str, model: Option<&'m PlannerModel>, budget: Option<f64>) -> Result<Planner<'m>, Failure> {
    let c = &run.config;
    Ok(match kind {
        "neural" => Planner::Neural(model.expect("model loaded for neural planner")),
        "lattice" => {
            let mut config = c.lattice.clone();
            if let Some(b) = budget {
                config.max_time_s = b;
            }
            Planner::Lattice { config, primitives: PrimitiveSet::builtin() }
        }
        "rrtstar" => {
            let mut config = c.rrtstar.clone();
            if let Some(b) = budget {
                config.max_time_s = b;
            }
            Planner::RrtStar(config)
        }
        other => return Err(Failure::Usage(anyhow::anyhow!("unknown planner `{other}`"))),
    })
}

fn check_budget(budget: Option<f64>) -> Result<(), Failure> {
    match budget {
        Some(b) if !(b > 0.0 && b.is_finite()) => Err(Failure::Usage(anyhow::anyhow!("--budget must be positive"))),
        _ => Ok(()),
    }
}

fn cmd_plan(run: &mut Run, args: &PlanArgs) -> Result<ExitCode, Failure> {
    run.config.check().usage()?;
    check_budget(args.budget)?;
    let task = load_task(&args.task)?;
    let name = match args.planner {
        PlannerKind::Neural => "neural",
        PlannerKind::Lattice => "lattice",
        PlannerKind::Rrtstar => "rrtstar",
    };
    let model = if args.planner == PlannerKind::Neural { Some(load_model(args.model.as_deref())?) } else { None };
    let planner = build_planner(run, name, model.as_ref(), args.budget)?;
    let result = planner.plan(&task, &run.config.vehicle);
    let mut meta = run.meta("plan");
    meta["planner"] = json!(name);
    meta["budget_s"] = json!(planner.budget_s());
    let mut out = json!({
        "meta": meta,
        "status": result.status,
        "length": result.length,
        "iterations": result.iterations,
        "path": result.path,
    });
    if run.timing {
        out["time_s"] = json!(result.time_s);
    }
    match &run.out {
        Some(p) => write_json(p, &out)?,
        None => println!("{}", serde_json::to_string_pretty(&out).expect("serializable")),
    }
    Ok(if result.status == PlanStatus::Feasible { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn cmd_evaluate(run: &mut Run, args: &EvaluateArgs) -> Result<ExitCode, Failure> {
    if let Some(p) = &args.planners {
        run.config.evaluate.planners = p.clone();
    }
    if args.parallel {
        run.config.evaluate.parallel = true;
    }
    run.config.check().usage()?;
    check_budget(args.budget)?;
    let (ds, data_meta) = read_dataset(&args.data)?;
    let needs_model = run.config.evaluate.planners.iter().any(|p| p == "neural");
    let model = if needs_model { Some(load_model(args.model.as_deref())?) } else { None };
    let planners = run
        .config
        .evaluate
        .planners
        .iter()
        .map(|p| build_planner(run, p, model.as_ref(), args.budget))
        .collect::<Result<Vec<_>, _>>()?;
    let split = ds.split(args.split.into());
    let tasks: &[PlanningTask] = &split[..args.limit.unwrap_or(split.len()).min(split.len())];
    let options = EvalOptions { timing: run.timing, parallel: run.config.evaluate.parallel };
    let eval = evaluate(tasks, &planners, &run.config.vehicle, options);

    let dir = run.out_or("eval");
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut meta_pairs = run.meta_pairs("evaluate");
    meta_pairs.push(("tasks", tasks.len().to_string()));
    let mut w = create(&dir.join("results.csv"))?;
    eval.write_csv(&mut w, &meta_pairs).context("writing results.csv")?;
    w.flush().context("writing results.csv")?;
    let mut meta = run.meta("evaluate");
    meta["dataset"] = data_meta.unwrap_or(Value::Null);
    meta["tasks"] = json!(tasks.len());
    meta["timing"] = json!(run.timing);
    write_json(&dir.join("summary.json"), &json!({ "meta": meta, "planners": eval.summary }))?;
    for s in &eval.summary {
        println!("{:<8} accuracy {:.3} ({}/{})", s.planner, s.accuracy, s.feasible, s.tasks);
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_heatmap(run: &mut Run, args: &HeatmapArgs) -> Result<ExitCode, Failure> {
    if let Some(r) = args.resolution {
        run.config.heatmap.resolution = r;
    }
    if let Some(o) = args.orientations {
        run.config.heatmap.orientations = o;
    }
    run.config.check().usage()?;
    let task = load_task(&args.task)?;
    let model = load_model(Some(&args.model))?;
    let map = heatmap(&task.fs, &task.qd, &run.config.heatmap, &model, &run.config.vehicle);
    let path = run.out_or("heatmap.csv");
    let mut meta = run.meta_pairs("heatmap");
    meta.push(("qd", format!("{} {} {}", task.qd.x(), task.qd.y(), task.qd.heading)));
    let mut w = create(&path)?;
    map.write_csv(&mut w, &meta).context("writing heatmap")?;
    w.flush().context("writing heatmap")?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_selftest(run: &mut Run, args: &SelftestArgs) -> Result<ExitCode, Failure> {
    run.config.check().usage()?;
    let (grad, cont, inv, eq) = if args.quick { (5, 100, 10, 40) } else { (50, 1000, 100, 200) };
    let (seed, params) = (run.config.seed, run.config.vehicle);
    let mut reports: Vec<SuiteReport> = gradient_suite(grad, seed, &params);
    reports.extend(continuity_suite(cont, seed));
    reports.extend(invariance_suite(inv, seed, &params));
    let (eq_report, accepted) = equivalence_suite(eq, seed, &params);
    reports.push(eq_report);
    for r in &reports {
        println!("{r}");
    }
    println!("equivalence paths accepted by the validator: {accepted}/{eq}");
    let passed = reports.iter().all(SuiteReport::passed);
    if let Some(p) = &run.out {
        write_json(p, &json!({ "meta": run.meta("selftest"), "passed": passed, "suites": reports }))?;
    }
    Ok(if passed { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn run(cli: Cli) -> Result<ExitCode, Failure> {
    let mut config = match &cli.config {
        Some(p) => Config::load(p).usage()?,
        None => Config::default(),
    };
    let seed = cli.seed.unwrap_or(config.seed);
    config.set_seed(seed);
    let timing = !cli.no_timing && config.evaluate.timing;
    let mut run = Run { config, out: cli.out, timing };
    match &cli.command {
        Command::Generate(a) => cmd_generate(&mut run, a),
        Command::Train(a) => cmd_train(&mut run, a),
        Command::Plan(a) => cmd_plan(&mut run, a),
        Command::Evaluate(a) => cmd_evaluate(&mut run, a),
        Command::Heatmap(a) => cmd_heatmap(&mut run, a),
        Command::Selftest(a) => cmd_selftest(&mut run, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
