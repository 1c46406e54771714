//! Self-supervised training: a pretraining phase without the collision
//! term, then a curriculum over maneuver kinds, optimized with Adam.

use std::io::Write;

use rand::{seq::SliceRandom, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{DiffError, Tape};
use crate::loss::{path_terms_r, total_loss_r, LossBreakdown, Phase};
use crate::network::{rollout, rollout_r, PlannerModel};
use crate::scenario::{derive_seed, Dataset, PlanningTask, ScenarioKind};
use crate::validate::Validator;
use crate::vehicle::VehicleParams;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("training split is empty")]
    EmptyTrainSet,
    #[error("invalid config: {0}")]
    Config(String),
    #[error("aborted after {0} consecutive non-finite batches")]
    NonFinite(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub curriculum: Vec<ScenarioKind>,
    /// Train each stage on its kind plus all earlier ones.
    pub cumulative: bool,
    pub epochs_per_stage: usize,
    /// Pretraining stops when the batch mean of curv + over + nbal drops
    /// below this value ...
    pub pretrain_threshold: f64,
    /// ... or after this many steps.
    pub pretrain_max_steps: usize,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 64,
            curriculum: ScenarioKind::ALL.to_vec(),
            cumulative: true,
            epochs_per_stage: 50,
            pretrain_threshold: 1e-3,
            pretrain_max_steps: 2000,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn check(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be at least 1".into()));
        }
        if self.curriculum.is_empty() {
            return Err(TrainError::Config("curriculum must name at least one kind".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self { lr, beta1, beta2, eps, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / b1t;
            let vh = self.v[i] / b2t;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// Loss of one task and its gradient with respect to the model weights.
#[derive(Debug, Clone)]
pub struct SampleGradient {
    pub breakdown: LossBreakdown,
    pub grad: Vec<f64>,
}

/// Differentiable rollout and loss for a single task.
pub fn sample_gradient(
    model: &PlannerModel,
    task: &PlanningTask,
    phase: Phase,
    params: &VehicleParams,
) -> Result<SampleGradient, DiffError> {
    let tape = Tape::new();
    let ctx = tape.constant(0.0);
    let (root, breakdown) = {
        let r = rollout_r(ctx, &task.input, model).map_err(|_| DiffError::BadRoot)?;
        let terms = path_terms_r(&r.chain.segments, &r.last_frame, &task.input.qd, &task.input.fs, params);
        total_loss_r(&terms, phase)
    };
    if !breakdown.total.is_finite() {
        return Err(DiffError::BadRoot);
    }
    let grads = tape.backward_with_params(root, &model.params)?;
    Ok(SampleGradient { breakdown, grad: grads.into_params() })
}

/// Loss breakdown of a task without building a tape.
pub fn sample_loss(model: &PlannerModel, task: &PlanningTask, phase: Phase, params: &VehicleParams) -> Option<LossBreakdown> {
    let r = rollout_r(0.0, &task.input, model).ok()?;
    let terms = path_terms_r(&r.chain.segments, &r.last_frame, &task.input.qd, &task.input.fs, params);
    Some(total_loss_r(&terms, phase).1)
}

/// Fraction of tasks whose rollout assembles and passes the validator.
pub fn validation_accuracy(model: &PlannerModel, tasks: &[PlanningTask], params: &VehicleParams) -> f64 {
    if tasks.is_empty() {
        return 0.0;
    }
    let ok: usize = tasks.par_iter().map(|t| usize::from(plan_is_valid(model, t, params).is_some())).sum();
    ok as f64 / tasks.len() as f64
}

/// Length of the planned path when it is valid.
pub fn plan_is_valid(model: &PlannerModel, task: &PlanningTask, params: &VehicleParams) -> Option<f64> {
    let path = rollout(&task.input, model).ok()?;
    let t = &task.input;
    Validator::default().validate(&path, &t.fs, &t.q0, &t.qd, params).accepted.then(|| path.length())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossMeans {
    pub coll: f64,
    pub curv: f64,
    pub over: f64,
    pub nbal: f64,
    pub len: f64,
    pub total: f64,
    pub feasible: f64,
}

impl LossMeans {
    fn of(items: &[LossBreakdown]) -> Self {
        let n = items.len().max(1) as f64;
        let mut m = Self::default();
        for b in items {
            m.coll += b.coll / n;
            m.curv += b.curv / n;
            m.over += b.over / n;
            m.nbal += b.nbal / n;
            m.len += b.len / n;
            m.total += b.total / n;
            m.feasible += f64::from(u8::from(b.is_feasible())) / n;
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub phase: Phase,
    /// Curriculum stage index; `None` while pretraining.
    pub stage: Option<usize>,
    pub epoch: Option<usize>,
    pub batch: usize,
    pub skipped: bool,
    pub loss: LossMeans,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// Global epoch index, used as the checkpoint id.
    pub id: usize,
    pub stage: usize,
    pub epoch: usize,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
    /// Mean length of the valid validation paths.
    pub val_mean_length: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub pretrain_steps: usize,
    pub steps: usize,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_val_accuracy: Option<f64>,
}

/// Observer for per-step metrics and per-epoch checkpoints.
pub trait TrainObserver {
    fn step(&mut self, _rec: &StepRecord) -> Result<(), TrainError> {
        Ok(())
    }
    fn epoch(&mut self, _rec: &EpochRecord, _model: &PlannerModel) -> Result<(), TrainError> {
        Ok(())
    }
}

impl TrainObserver for () {}

/// Writes every step record as one JSON line.
pub struct JsonlMetrics<W: Write>(pub W);

impl<W: Write> TrainObserver for JsonlMetrics<W> {
    fn step(&mut self, rec: &StepRecord) -> Result<(), TrainError> {
        serde_json::to_writer(&mut self.0, rec)?;
        self.0.write_all(b"\n")?;
        Ok(())
    }
}

struct Trainer<'a> {
    config: &'a TrainConfig,
    params: &'a VehicleParams,
    model: PlannerModel,
    adam: Adam,
    step: usize,
    consecutive_skips: usize,
}

impl Trainer<'_> {
    /// One Adam update on the mean gradient of `batch`.
    fn update(
        &mut self,
        batch: &[&PlanningTask],
        phase: Phase,
        stage: Option<usize>,
        epoch: Option<usize>,
        obs: &mut dyn TrainObserver,
    ) -> Result<StepRecord, TrainError> {
        let results: Vec<_> =
            batch.par_iter().map(|t| sample_gradient(&self.model, t, phase, self.params)).collect();
        let mut grad = vec![0.0; self.model.params.len()];
        let mut breakdowns = Vec::with_capacity(batch.len());
        let mut finite = true;
        for r in &results {
            match r {
                Ok(s) if s.grad.iter().all(|g| g.is_finite()) => {
                    for (a, g) in grad.iter_mut().zip(&s.grad) {
                        *a += g;
                    }
                    breakdowns.push(s.breakdown);
                }
                _ => finite = false,
            }
        }
        let rec = StepRecord {
            step: self.step,
            phase,
            stage,
            epoch,
            batch: batch.len(),
            skipped: !finite,
            loss: LossMeans::of(&breakdowns),
        };
        if finite {
            let n = batch.len() as f64;
            grad.iter_mut().for_each(|g| *g /= n);
            self.adam.step(&mut self.model.params, &grad);
            self.consecutive_skips = 0;
        } else {
            log::warn!("step {}: non-finite loss or gradient, batch skipped", self.step);
            self.consecutive_skips += 1;
            if self.consecutive_skips >= 3 {
                return Err(TrainError::NonFinite(self.consecutive_skips));
            }
        }
        self.step += 1;
        obs.step(&rec)?;
        Ok(rec)
    }
}

/// Trains a freshly initialized model on `dataset.train` and returns the
/// checkpoint with the highest validation accuracy.
pub fn train(
    dataset: &Dataset,
    config: &TrainConfig,
    params: &VehicleParams,
    obs: &mut dyn TrainObserver,
) -> Result<(PlannerModel, TrainReport), TrainError> {
    train_from(PlannerModel::init(derive_seed(config.seed, "init", 0)), dataset, config, params, obs)
}

pub fn train_from(
    model: PlannerModel,
    dataset: &Dataset,
    config: &TrainConfig,
    params: &VehicleParams,
    obs: &mut dyn TrainObserver,
) -> Result<(PlannerModel, TrainReport), TrainError> {
    config.check()?;
    if dataset.train.is_empty() {
        return Err(TrainError::EmptyTrainSet);
    }
    let mut report = TrainReport::default();
    if config.epochs_per_stage == 0 {
        return Ok((model, report));
    }
    let n = model.params.len();
    let mut tr = Trainer {
        config,
        params,
        adam: Adam::new(n, config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_eps),
        model,
        step: 0,
        consecutive_skips: 0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "shuffle", 0));

    // Pretraining on all training tasks with the collision term gated off.
    let all: Vec<&PlanningTask> = dataset.train.iter().collect();
    let mut order: Vec<usize> = (0..all.len()).collect();
    let mut cursor = all.len();
    while report.pretrain_steps < config.pretrain_max_steps {
        let mut batch = Vec::with_capacity(config.batch_size);
        while batch.len() < config.batch_size.min(all.len()) {
            if cursor == all.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(all[order[cursor]]);
            cursor += 1;
        }
        let rec = tr.update(&batch, Phase::Pretrain, None, None, obs)?;
        report.pretrain_steps += 1;
        if !rec.skipped && rec.loss.curv + rec.loss.over + rec.loss.nbal < config.pretrain_threshold {
            break;
        }
    }

    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut epoch_id = 0;
    for stage in 0..tr.config.curriculum.len() {
        let kinds: &[ScenarioKind] = if config.cumulative {
            &config.curriculum[..=stage]
        } else {
            &config.curriculum[stage..=stage]
        };
        let tasks: Vec<&PlanningTask> = dataset.train.iter().filter(|t| kinds.contains(&t.kind)).collect();
        if tasks.is_empty() {
            continue;
        }
        let mut order: Vec<usize> = (0..tasks.len()).collect();
        for epoch in 0..config.epochs_per_stage {
            order.shuffle(&mut rng);
            let mut feasible = 0.0;
            let mut seen = 0.0;
            for chunk in order.chunks(config.batch_size) {
                let batch: Vec<&PlanningTask> = chunk.iter().map(|&i| tasks[i]).collect();
                let rec = tr.update(&batch, Phase::Main, Some(stage), Some(epoch), obs)?;
                if !rec.skipped {
                    feasible += rec.loss.feasible * batch.len() as f64;
                    seen += batch.len() as f64;
                }
            }
            let lengths: Vec<Option<f64>> =
                dataset.val.par_iter().map(|t| plan_is_valid(&tr.model, t, params)).collect();
            let valid: Vec<f64> = lengths.iter().flatten().copied().collect();
            let val_accuracy =
                if dataset.val.is_empty() { 0.0 } else { valid.len() as f64 / dataset.val.len() as f64 };
            let rec = EpochRecord {
                id: epoch_id,
                stage,
                epoch,
                train_accuracy: if seen > 0.0 { feasible / seen } else { 0.0 },
                val_accuracy,
                val_mean_length: (!valid.is_empty()).then(|| valid.iter().sum::<f64>() / valid.len() as f64),
            };
            log::info!(
                "stage {stage} epoch {epoch}: train feasible {:.3}, val accuracy {:.3}",
                rec.train_accuracy,
                rec.val_accuracy
            );
            obs.epoch(&rec, &tr.model)?;
            if best.as_ref().is_none_or(|(acc, _)| val_accuracy > *acc) {
                best = Some((val_accuracy, tr.model.params.clone()));
                report.best_epoch = Some(epoch_id);
                report.best_val_accuracy = Some(val_accuracy);
            }
            report.epochs.push(rec);
            epoch_id += 1;
        }
    }
    report.steps = tr.step;
    let model = match best {
        Some((_, p)) => PlannerModel::from_params(p),
        None => tr.model,
    };
    Ok((model, report))
}
