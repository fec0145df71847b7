//! Micro pretraining on bursts, joint training on macro sequences, and
//! evaluation against held-out trajectories.
//!
//! Both phases share one loop: each epoch runs `batches` Adam steps, each
//! step averages gradients over `batch_size` windows sampled with
//! replacement, clips the global norm and applies the step-decayed learning
//! rate. A batch whose loss or gradient is non-finite is skipped and
//! counted. The model with the lowest validation loss is returned.

use serde::{Deserialize, Serialize};

use crate::data::{Checkpoint, MultiScaleTrajectory};
use crate::error::{PimrlError, Result};
use crate::metrics::{AggregateMetrics, MetricsReport};
use crate::model::{ModelNodes, PimrlModel};
use crate::rng::SplitMix64;
use crate::scheduler::{self, PlannedStep, RolloutMode, ScheduleConfig};
use crate::tensor::{clip_global_norm, AdamState, Field, Graph, LrSchedule, NodeId, Tensor};

const SAMPLE_STREAM: u64 = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Pretrain,
    Joint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Optimizer steps per epoch (B).
    pub batches: usize,
    /// Windows per optimizer step (N_b).
    pub batch_size: usize,
    /// Pretraining: micro steps per window, 0 for the whole burst. Joint
    /// training uses the cycle curriculum instead.
    pub rollout_len: usize,
    /// Joint training: largest number of cycles per window.
    pub max_cycles: usize,
    pub lr: LrSchedule,
    pub clip_norm: f64,
    pub seed: u64,
    /// Validate every this many epochs (and after the last one).
    pub val_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1000,
            batches: 4,
            batch_size: 4,
            rollout_len: 0,
            max_cycles: 4,
            lr: LrSchedule::new(5e-3),
            clip_norm: 1.0,
            seed: 0,
            val_every: 1,
        }
    }
}

impl TrainConfig {
    /// Defaults for micro pretraining (learning rate 1e-3).
    pub fn pretrain() -> Self {
        Self {
            lr: LrSchedule::new(1e-3),
            ..Self::default()
        }
    }

    /// Defaults for joint training (learning rate 5e-3).
    pub fn joint() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr.lr0 > 0.0) || !(self.lr.gamma > 0.0) || self.lr.step_size == 0 {
            return Err(PimrlError::Config(format!("bad learning-rate schedule {:?}", self.lr)));
        }
        if self.batches == 0 || self.batch_size == 0 || self.max_cycles == 0 || self.val_every == 0 {
            return Err(PimrlError::Config("batches, batch_size, max_cycles and val_every must be >= 1".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(PimrlError::Config("clip_norm must be positive".into()));
        }
        Ok(())
    }

    /// Cycles per joint window at `epoch`: 1, doubling every third of the
    /// run, capped at `max_cycles`.
    pub fn cycles_at(&self, epoch: usize) -> usize {
        let third = self.epochs.div_ceil(3).max(1);
        let doublings = (epoch / third).min(16) as u32;
        (1usize << doublings).min(self.max_cycles)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Mean training loss of the accepted batches of each epoch.
    pub epoch_loss: Vec<f64>,
    /// `(epoch, loss)`; epoch 0 is the initial model.
    pub val_loss: Vec<(usize, f64)>,
    pub skipped_batches: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

pub struct TrainOutcome {
    /// Weights with the lowest validation loss.
    pub model: PimrlModel,
    pub checkpoint: Checkpoint,
    pub log: TrainLog,
}

/// Mean squared error over aligned frame sequences.
pub fn mse_loss(pred: &[Field], target: &[Field]) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(PimrlError::InvalidArgument(format!(
            "loss needs aligned, non-empty sequences ({} vs {})",
            pred.len(),
            target.len()
        )));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (p, t) in pred.iter().zip(target) {
        if p.shape() != t.shape() {
            return Err(PimrlError::ShapeMismatch {
                op: "mse_loss",
                lhs: p.shape().to_vec(),
                rhs: t.shape().to_vec(),
            });
        }
        total += p.data().iter().zip(t.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        count += p.len();
    }
    Ok(total / count as f64)
}

/// Mean of per-frame MSE nodes (frames share a shape, so this equals the
/// mean over all elements).
fn sequence_loss(g: &mut Graph, pred: &[NodeId], target: &[&Field]) -> Result<NodeId> {
    let mut acc: Option<NodeId> = None;
    for (p, t) in pred.iter().zip(target) {
        let tn = g.constant((*t).clone());
        let l = g.mse(*p, tn)?;
        acc = Some(match acc {
            None => l,
            Some(a) => g.add(a, l)?,
        });
    }
    let acc = acc.ok_or_else(|| PimrlError::InvalidArgument("empty loss window".into()))?;
    Ok(g.scale(acc, 1.0 / pred.len() as f64))
}

/// What one phase trains on.
trait Task {
    const PHASE: Phase;
    fn train_micro(&self) -> bool;
    fn train_macro(&self) -> bool;
    fn batch_loss(&self, g: &mut Graph, model: &PimrlModel, w: &ModelNodes, rng: &mut SplitMix64, epoch: usize) -> Result<NodeId>;
    fn validation_loss(&self, model: &PimrlModel) -> Result<f64>;
}

struct BurstWindow<'a> {
    frames: &'a [Field],
}

struct PretrainTask<'a> {
    train: Vec<BurstWindow<'a>>,
    val: Vec<BurstWindow<'a>>,
    len: usize,
    sched: ScheduleConfig,
}

impl<'a> PretrainTask<'a> {
    fn new(train: &'a [MultiScaleTrajectory], val: &'a [MultiScaleTrajectory], cfg: &TrainConfig, sched: &ScheduleConfig) -> Result<Self> {
        let collect = |set: &'a [MultiScaleTrajectory]| -> Vec<BurstWindow<'a>> {
            set.iter()
                .flat_map(|t| t.bursts.iter())
                .filter(|b| b.frames.len() >= 2)
                .map(|b| BurstWindow { frames: &b.frames })
                .collect()
        };
        let train_b = collect(train);
        if train_b.is_empty() {
            return Err(PimrlError::InvalidArgument("pretraining needs micro bursts in the training set".into()));
        }
        let shortest = train_b.iter().map(|b| b.frames.len()).min().expect("non-empty") - 1;
        let len = if cfg.rollout_len == 0 { shortest } else { cfg.rollout_len };
        if len > shortest {
            return Err(PimrlError::InvalidArgument(format!(
                "pretrain window of {len} steps exceeds the shortest burst ({shortest} steps)"
            )));
        }
        let mut val_b: Vec<BurstWindow<'a>> = collect(val).into_iter().filter(|b| b.frames.len() > len).collect();
        if val_b.is_empty() {
            val_b = collect(train);
        }
        Ok(Self {
            train: train_b,
            val: val_b,
            len,
            sched: *sched,
        })
    }
}

impl Task for PretrainTask<'_> {
    const PHASE: Phase = Phase::Pretrain;

    fn train_micro(&self) -> bool {
        true
    }

    fn train_macro(&self) -> bool {
        false
    }

    fn batch_loss(&self, g: &mut Graph, model: &PimrlModel, w: &ModelNodes, rng: &mut SplitMix64, _epoch: usize) -> Result<NodeId> {
        let b = &self.train[rng.index(self.train.len())];
        let start = rng.index(b.frames.len() - self.len);
        let physics = self.sched.micro_physics(model);
        let mut u = g.constant(b.frames[start].clone());
        let mut pred = Vec::with_capacity(self.len);
        for _ in 0..self.len {
            u = model.micro.step_node(g, &w.micro, u, physics)?;
            pred.push(u);
        }
        let target: Vec<&Field> = b.frames[start + 1..=start + self.len].iter().collect();
        sequence_loss(g, &pred, &target)
    }

    fn validation_loss(&self, model: &PimrlModel) -> Result<f64> {
        let physics = self.sched.micro_physics(model);
        let mut total = 0.0;
        for b in &self.val {
            let pred = model.micro.rollout_with(&b.frames[0], self.len, physics)?;
            total += mse_loss(&pred, &b.frames[1..=self.len])?;
        }
        Ok(total / self.val.len() as f64)
    }
}

struct JointTask<'a> {
    train: &'a [MultiScaleTrajectory],
    val: &'a [MultiScaleTrajectory],
    sched: ScheduleConfig,
    cfg: TrainConfig,
    shortest: usize,
}

impl<'a> JointTask<'a> {
    fn new(train: &'a [MultiScaleTrajectory], val: &'a [MultiScaleTrajectory], cfg: &TrainConfig, sched: &ScheduleConfig) -> Result<Self> {
        if train.is_empty() {
            return Err(PimrlError::InvalidArgument("joint training needs training trajectories".into()));
        }
        let shortest = train.iter().chain(val).map(|t| t.macro_frames.len()).min().expect("non-empty");
        let task = Self {
            train,
            val,
            sched: *sched,
            cfg: cfg.clone(),
            shortest,
        };
        let span = task.window(1)?.1;
        if span + 1 > shortest {
            return Err(PimrlError::InvalidArgument(format!(
                "one cycle spans {span} macro intervals but the shortest trajectory has {shortest} frames"
            )));
        }
        Ok(task)
    }

    /// Plan and macro-interval span for `cycles` cycles, shrunk to fit the
    /// shortest trajectory.
    fn window(&self, cycles: usize) -> Result<(Vec<(PlannedStep, bool)>, usize)> {
        let per_cycle = match self.sched.mode() {
            RolloutMode::Pimrl => self.sched.cycle_len(),
            _ => self.sched.cycle_span(),
        };
        let mut c = cycles.max(1);
        loop {
            let steps = scheduler::plan(&self.sched, c * per_cycle)?;
            let span: usize = steps.iter().map(|(s, _)| s.advance()).sum();
            if c == 1 || span < self.shortest {
                return Ok((steps, span));
            }
            c -= 1;
        }
    }
}

impl Task for JointTask<'_> {
    const PHASE: Phase = Phase::Joint;

    fn train_micro(&self) -> bool {
        !self.sched.macro_only
    }

    fn train_macro(&self) -> bool {
        !self.sched.micro_only
    }

    fn batch_loss(&self, g: &mut Graph, model: &PimrlModel, w: &ModelNodes, rng: &mut SplitMix64, epoch: usize) -> Result<NodeId> {
        let (steps, span) = self.window(self.cfg.cycles_at(epoch))?;
        let traj = &self.train[rng.index(self.train.len())];
        let start = rng.index(traj.macro_frames.len() - span);
        let u0 = g.constant(traj.macro_frames[start].clone());
        let pred = scheduler::rollout_nodes(g, model, w, u0, &steps, &self.sched)?;
        let mut offset = start;
        let target: Vec<&Field> = steps
            .iter()
            .map(|(s, _)| {
                offset += s.advance();
                &traj.macro_frames[offset]
            })
            .collect();
        sequence_loss(g, &pred, &target)
    }

    fn validation_loss(&self, model: &PimrlModel) -> Result<f64> {
        let set = if self.val.is_empty() { self.train } else { self.val };
        let (steps, _) = self.window(self.cfg.max_cycles)?;
        let mut total = 0.0;
        for traj in set {
            let rec = scheduler::rollout(&traj.macro_frames[0], steps.len(), model, &self.sched)?;
            let target: Vec<Field> = rec.offsets.iter().map(|o| traj.macro_frames[*o].clone()).collect();
            total += mse_loss(&rec.frames, &target)?;
        }
        Ok(total / set.len() as f64)
    }
}

fn checkpoint_of(model: &PimrlModel, adam: Option<&AdamState>, epoch: usize, best: f64, phase: Phase, cfg: &TrainConfig, sched: &ScheduleConfig) -> Result<Checkpoint> {
    Ok(Checkpoint {
        params: model.named_params(),
        adam: adam.cloned(),
        epoch,
        config: serde_json::json!({
            "phase": phase,
            "train": cfg,
            "schedule": sched,
            "model": model.config(),
        }),
        best_val_loss: Some(best),
    })
}

fn run<T: Task>(mut model: PimrlModel, task: &T, cfg: &TrainConfig, sched: &ScheduleConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    sched.validate()?;
    let mut rng = SplitMix64::derive(cfg.seed, SAMPLE_STREAM);
    let lens: Vec<usize> = model.params().iter().map(|p| p.len()).collect();
    let mut adam = AdamState::new(&lens);
    let mut log = TrainLog::default();
    let initial_val = task.validation_loss(&model).unwrap_or(f64::INFINITY);
    log.val_loss.push((0, initial_val));
    log.best_val_loss = initial_val;
    let mut best_model = model.clone();
    let mut best_adam: Option<AdamState> = None;
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr.lr_at(epoch);
        let mut epoch_total = 0.0;
        let mut accepted = 0usize;
        for _ in 0..cfg.batches {
            let mut grads: Vec<Tensor> = model.params().iter().map(|p| Tensor::zeros(p.shape())).collect();
            let mut batch_loss = 0.0;
            let mut ok = true;
            for _ in 0..cfg.batch_size {
                let mut g = Graph::leaves_only();
                let w = model.bind(&mut g, task.train_micro(), task.train_macro());
                let loss = match task.batch_loss(&mut g, &model, &w, &mut rng, epoch) {
                    Ok(l) => l,
                    Err(PimrlError::Divergence { .. }) => {
                        ok = false;
                        break;
                    }
                    Err(e) => return Err(e),
                };
                let lv = g.value(loss).data()[0];
                if !lv.is_finite() {
                    ok = false;
                    break;
                }
                batch_loss += lv;
                g.backward(loss)?;
                let inv = 1.0 / cfg.batch_size as f64;
                for (acc, id) in grads.iter_mut().zip(w.params()) {
                    if let Some(gr) = g.grad(id) {
                        acc.data_mut().iter_mut().zip(gr).for_each(|(a, b)| *a += inv * b);
                    }
                }
            }
            if !ok || grads.iter().any(|g| !g.is_finite()) {
                log.skipped_batches += 1;
                continue;
            }
            clip_global_norm(&mut grads, cfg.clip_norm);
            let mut params = model.params_mut();
            match adam.step(&mut params, &grads, lr) {
                Ok(()) => {}
                Err(PimrlError::NonFiniteGradient(_)) => {
                    log.skipped_batches += 1;
                    continue;
                }
                Err(e) => return Err(e),
            }
            epoch_total += batch_loss / cfg.batch_size as f64;
            accepted += 1;
        }
        log.epoch_loss.push(if accepted > 0 { epoch_total / accepted as f64 } else { f64::NAN });
        let done = epoch + 1;
        if done % cfg.val_every == 0 || done == cfg.epochs {
            let v = match task.validation_loss(&model) {
                Ok(v) if v.is_finite() => v,
                Ok(_) | Err(PimrlError::Divergence { .. }) => f64::INFINITY,
                Err(e) => return Err(e),
            };
            log.val_loss.push((done, v));
            if v < log.best_val_loss || !log.best_val_loss.is_finite() && v.is_finite() {
                log.best_val_loss = v;
                log.best_epoch = done;
                best_model = model.clone();
                best_adam = Some(adam.clone());
            }
        }
    }
    let checkpoint = checkpoint_of(
        &best_model,
        Some(best_adam.as_ref().unwrap_or(&AdamState::new(&lens))),
        log.best_epoch,
        log.best_val_loss,
        T::PHASE,
        cfg,
        sched,
    )?;
    Ok(TrainOutcome {
        model: best_model,
        checkpoint,
        log,
    })
}

/// Trains only the micro network: each window rolls the micro step from one
/// burst frame across the following `rollout_len` frames.
pub fn pretrain_micro(
    model: PimrlModel,
    train: &[MultiScaleTrajectory],
    val: &[MultiScaleTrajectory],
    cfg: &TrainConfig,
    sched: &ScheduleConfig,
) -> Result<TrainOutcome> {
    let task = PretrainTask::new(train, val, cfg, sched)?;
    run(model, &task, cfg, sched)
}

/// Trains the whole schedule end to end on macro frames; only emitted frames
/// enter the loss.
pub fn train_joint(
    model: PimrlModel,
    train: &[MultiScaleTrajectory],
    val: &[MultiScaleTrajectory],
    cfg: &TrainConfig,
    sched: &ScheduleConfig,
) -> Result<TrainOutcome> {
    let task = JointTask::new(train, val, cfg, sched)?;
    run(model, &task, cfg, sched)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryReport {
    pub seed: u64,
    pub metrics: MetricsReport,
    /// Time of the first frame lost to divergence.
    pub diverged_at: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: RolloutMode,
    pub trajectories: Vec<TrajectoryReport>,
    pub aggregate: AggregateMetrics,
}

/// Emission offsets (in Δt) of the full schedule that fit in `n_macro_frames`.
pub fn evaluation_offsets(sched: &ScheduleConfig, n_macro_frames: usize) -> Result<Vec<usize>> {
    let pimrl = sched.with_mode(RolloutMode::Pimrl);
    let last = n_macro_frames.saturating_sub(1);
    let all = scheduler::emission_offsets(&pimrl, last)?;
    Ok(all.into_iter().take_while(|o| *o <= last).collect())
}

/// Model frames at the given offsets. Single-module modes advance one Δt per
/// frame and are subsampled, so every mode shares the same time axis. A
/// rollout that diverges is padded with infinite frames from that point on;
/// the second value is the first padded index.
pub fn predict_at(u0: &Field, offsets: &[usize], model: &PimrlModel, sched: &ScheduleConfig) -> Result<(Vec<Field>, Option<usize>)> {
    let max = *offsets.last().ok_or_else(|| PimrlError::InvalidArgument("no evaluation times".into()))?;
    let per_frame = sched.mode() != RolloutMode::Pimrl;
    let horizon = if per_frame { max } else { offsets.len() };
    let (rec, err) = scheduler::rollout_partial(u0, horizon, model, sched)?;
    if !per_frame && !offsets.starts_with(&rec.offsets) {
        return Err(PimrlError::InvalidArgument("offsets do not follow the schedule".into()));
    }
    let blown = Tensor::full(u0.shape(), f64::INFINITY);
    let mut frames = Vec::with_capacity(offsets.len());
    let mut diverged = None;
    for (i, o) in offsets.iter().enumerate() {
        let idx = if per_frame { o - 1 } else { i };
        match rec.frames.get(idx) {
            Some(f) if f.is_finite() => frames.push(f.clone()),
            _ => {
                diverged.get_or_insert(i);
                frames.push(blown.clone());
            }
        }
    }
    debug_assert!(err.is_some() || diverged.is_none());
    Ok((frames, diverged))
}

/// Rolls out from the first frame of each test trajectory over at most
/// `horizon` emitted frames and scores against the reference.
pub fn evaluate(test: &[MultiScaleTrajectory], model: &PimrlModel, sched: &ScheduleConfig, horizon: Option<usize>) -> Result<EvalReport> {
    let mut reports = Vec::with_capacity(test.len());
    for traj in test {
        let mut offsets = evaluation_offsets(sched, traj.macro_frames.len())?;
        if let Some(h) = horizon {
            offsets.truncate(h);
        }
        let (pred, diverged) = predict_at(&traj.macro_frames[0], &offsets, model, sched)?;
        let truth: Vec<Field> = offsets.iter().map(|o| traj.macro_frames[*o].clone()).collect();
        let times: Vec<f64> = offsets.iter().map(|o| *o as f64 * sched.dt_macro()).collect();
        reports.push(TrajectoryReport {
            seed: traj.seed,
            metrics: MetricsReport::compute(&pred, &truth, &times, sched.dt_macro())?,
            diverged_at: diverged.map(|i| times[i]),
        });
    }
    let metrics: Vec<MetricsReport> = reports.iter().map(|r| r.metrics.clone()).collect();
    Ok(EvalReport {
        mode: sched.mode(),
        aggregate: MetricsReport::aggregate(&metrics)?,
        trajectories: reports,
    })
}

/// Scores a stored rollout against a reference trajectory by matching frame
/// times (the rollout's `t = 0` frame is skipped).
pub fn score_trajectory(pred: &MultiScaleTrajectory, truth: &MultiScaleTrajectory) -> Result<MetricsReport> {
    let dt = truth.dt_macro();
    let mut p = Vec::new();
    let mut t = Vec::new();
    let mut times = Vec::new();
    for (time, frame) in pred.macro_times().into_iter().zip(&pred.macro_frames) {
        let idx = (time / dt).round();
        if (time - idx * dt).abs() > 1e-9 * dt.max(time.abs()) {
            return Err(PimrlError::InvalidArgument(format!("frame time {time} is not a multiple of {dt}")));
        }
        let idx = idx as usize;
        if idx == 0 {
            continue;
        }
        let reference = truth
            .macro_frames
            .get(idx)
            .ok_or_else(|| PimrlError::InvalidArgument(format!("reference has no frame at t = {time}")))?;
        p.push(frame.clone());
        t.push(reference.clone());
        times.push(time);
    }
    MetricsReport::compute(&p, &t, &times, dt)
}
