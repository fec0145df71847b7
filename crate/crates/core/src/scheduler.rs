//! Rollout loops combining the two networks.
//!
//! A *combined* step runs `k` micro steps from `u` (reaching `t + Δt`) and
//! feeds the result to one macro step, emitting a frame at `t + 2Δt`. A
//! *free* step is one macro step from the last emitted frame (`+Δt`). A cycle
//! is `n_corrected` combined steps followed by `n_free` free steps; the
//! ConvLSTM state carries across steps and cycles.
//!
//! Every loop is first turned into a flat plan of [`PlannedStep`]s, then run
//! either on plain tensors (inference) or inside one autodiff graph
//! (training), so both paths share the same bookkeeping.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::MultiScaleTrajectory;
use crate::error::{PimrlError, Result};
use crate::macro_net::ConvLstmState;
use crate::model::{ModelNodes, PimrlModel};
use crate::solvers::PdeCase;
use crate::tensor::{Field, Graph, NodeId, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    /// Micro steps per macro interval.
    pub k: usize,
    /// Micro step δt; the macro step is `k · dt_micro`.
    pub dt_micro: f64,
    pub n_corrected: usize,
    pub n_free: usize,
    /// Macro steps from the cycle input instead of the micro output.
    pub no_connect: bool,
    /// Drop the fixed physics convolution from the micro step.
    pub no_physics_conv: bool,
    /// Run only the micro network, emitting every `k` steps.
    pub micro_only: bool,
    /// Run only the macro network.
    pub macro_only: bool,
    /// Zero the ConvLSTM state at every cycle start instead of only at
    /// rollout start.
    pub reset_state_each_cycle: bool,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            k: 15,
            dt_micro: 0.01,
            n_corrected: 2,
            n_free: 4,
            no_connect: false,
            no_physics_conv: false,
            micro_only: false,
            macro_only: false,
            reset_state_each_cycle: false,
        }
    }
}

/// Which networks a rollout uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RolloutMode {
    Pimrl,
    MicroOnly,
    MacroOnly,
}

impl FromStr for RolloutMode {
    type Err = PimrlError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pimrl" => Ok(RolloutMode::Pimrl),
            "micro-only" => Ok(RolloutMode::MicroOnly),
            "macro-only" => Ok(RolloutMode::MacroOnly),
            _ => Err(PimrlError::Config(format!("unknown mode `{s}` (pimrl, micro-only, macro-only)"))),
        }
    }
}

impl std::fmt::Display for RolloutMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RolloutMode::Pimrl => "pimrl",
            RolloutMode::MicroOnly => "micro-only",
            RolloutMode::MacroOnly => "macro-only",
        })
    }
}

impl ScheduleConfig {
    /// Default cycle with the case's micro step.
    pub fn for_case(case: &PdeCase) -> Self {
        Self {
            dt_micro: case.dt_micro,
            ..Self::default()
        }
    }

    /// Default split for cycle size `n`: `ceil(n/2)` combined, `n` free.
    pub fn with_cycle_size(self, n: usize) -> Self {
        Self {
            n_corrected: n.div_ceil(2),
            n_free: n,
            ..self
        }
    }

    pub fn dt_macro(&self) -> f64 {
        self.k as f64 * self.dt_micro
    }

    /// Scale separation δt/Δt = 1/k.
    pub fn zeta(&self) -> f64 {
        1.0 / self.k as f64
    }

    pub fn mode(&self) -> RolloutMode {
        if self.micro_only {
            RolloutMode::MicroOnly
        } else if self.macro_only {
            RolloutMode::MacroOnly
        } else {
            RolloutMode::Pimrl
        }
    }

    pub fn with_mode(self, mode: RolloutMode) -> Self {
        Self {
            micro_only: mode == RolloutMode::MicroOnly,
            macro_only: mode == RolloutMode::MacroOnly,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(PimrlError::Config("k must be >= 1".into()));
        }
        if !(self.dt_micro > 0.0 && self.dt_micro.is_finite()) {
            return Err(PimrlError::Config(format!("dt_micro must be positive, got {}", self.dt_micro)));
        }
        if self.n_corrected == 0 && self.n_free == 0 {
            return Err(PimrlError::Config("n_corrected and n_free cannot both be 0".into()));
        }
        if self.micro_only && self.macro_only {
            return Err(PimrlError::Config("micro_only and macro_only are exclusive".into()));
        }
        Ok(())
    }

    pub fn cycle_len(&self) -> usize {
        self.n_corrected + self.n_free
    }

    /// Macro intervals covered by one full cycle.
    pub fn cycle_span(&self) -> usize {
        2 * self.n_corrected + self.n_free
    }

    pub(crate) fn micro_physics(&self, model: &PimrlModel) -> bool {
        model.micro.config.physics && !self.no_physics_conv
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    MacroAfterMicro,
    MacroFree,
    Micro,
}

/// One emitted frame's worth of work.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlannedStep {
    /// `k` micro steps then one macro step; advances 2Δt.
    Combined,
    /// One macro step; advances Δt.
    MacroFree,
    /// `k` micro steps; advances Δt.
    Micro,
}

impl PlannedStep {
    pub fn advance(self) -> usize {
        match self {
            PlannedStep::Combined => 2,
            _ => 1,
        }
    }

    pub fn provenance(self) -> Provenance {
        match self {
            PlannedStep::Combined => Provenance::MacroAfterMicro,
            PlannedStep::MacroFree => Provenance::MacroFree,
            PlannedStep::Micro => Provenance::Micro,
        }
    }
}

/// The first `horizon` steps of the schedule, plus a flag per step marking
/// cycle starts.
pub fn plan(cfg: &ScheduleConfig, horizon: usize) -> Result<Vec<(PlannedStep, bool)>> {
    cfg.validate()?;
    Ok(match cfg.mode() {
        RolloutMode::MicroOnly => vec![(PlannedStep::Micro, false); horizon],
        RolloutMode::MacroOnly => vec![(PlannedStep::MacroFree, false); horizon],
        RolloutMode::Pimrl => {
            let n = cfg.cycle_len();
            (0..horizon)
                .map(|i| {
                    let step = if i % n < cfg.n_corrected {
                        PlannedStep::Combined
                    } else {
                        PlannedStep::MacroFree
                    };
                    (step, i % n == 0)
                })
                .collect()
        }
    })
}

/// Emission offsets in units of Δt for the first `horizon` frames.
pub fn emission_offsets(cfg: &ScheduleConfig, horizon: usize) -> Result<Vec<usize>> {
    let mut t = 0;
    Ok(plan(cfg, horizon)?
        .into_iter()
        .map(|(s, _)| {
            t += s.advance();
            t
        })
        .collect())
}

/// Frames emitted by a rollout with their times.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutRecord {
    /// Emission times in seconds, `offsets[i] · Δt`.
    pub times: Vec<f64>,
    /// Emission times as integer multiples of Δt.
    pub offsets: Vec<usize>,
    pub frames: Vec<Field>,
    pub provenance: Vec<Provenance>,
}

impl RolloutRecord {
    fn new() -> Self {
        Self {
            times: Vec::new(),
            offsets: Vec::new(),
            frames: Vec::new(),
            provenance: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Stores the rollout as a trajectory file body: `u0` at t = 0 followed by
    /// every emitted frame, with explicit times.
    pub fn to_trajectory(&self, u0: &Field, case: &PdeCase, cfg: &ScheduleConfig, seed: u64) -> MultiScaleTrajectory {
        let mut frames = vec![u0.clone()];
        frames.extend(self.frames.iter().cloned());
        let mut times = vec![0.0];
        times.extend(&self.times);
        MultiScaleTrajectory {
            case: case.name,
            field_names: case.name.field_names(),
            grid: u0.shape()[1..].to_vec(),
            domain_length: case.domain_length,
            dt_micro: cfg.dt_micro,
            k: cfg.k,
            seed,
            params: case.params.clone(),
            macro_frames: frames,
            bursts: Vec::new(),
            times: Some(times),
        }
    }
}

fn check_model(model: &PimrlModel, cfg: &ScheduleConfig) -> Result<()> {
    cfg.validate()?;
    if model.micro.dt != cfg.dt_micro {
        return Err(PimrlError::Config(format!(
            "schedule dt_micro {} differs from the micro network's {}",
            cfg.dt_micro, model.micro.dt
        )));
    }
    Ok(())
}

fn relabel(e: PimrlError, frame: usize) -> PimrlError {
    match e {
        PimrlError::Divergence { phase, .. } => PimrlError::Divergence { phase, step: frame },
        other => other,
    }
}

/// `k` micro steps then one macro step; the micro output is only an input
/// to the macro step (or ignored under `no_connect`).
pub fn combined_step(u: &Field, state: &ConvLstmState, model: &PimrlModel, cfg: &ScheduleConfig) -> Result<(Field, ConvLstmState)> {
    check_model(model, cfg)?;
    let v = if cfg.no_connect {
        u.clone()
    } else {
        micro_block(u, model, cfg)?
    };
    model.macro_.step(&v, state)
}

fn micro_block(u: &Field, model: &PimrlModel, cfg: &ScheduleConfig) -> Result<Field> {
    let mut frames = model.micro.rollout_with(u, cfg.k, cfg.micro_physics(model))?;
    Ok(frames.pop().expect("k >= 1"))
}

fn run_plan(
    u0: &Field,
    state0: ConvLstmState,
    steps: &[(PlannedStep, bool)],
    offset0: usize,
    model: &PimrlModel,
    cfg: &ScheduleConfig,
) -> Result<(RolloutRecord, Field, ConvLstmState)> {
    let (rec, u, state, err) = run_plan_partial(u0, state0, steps, offset0, model, cfg)?;
    match err {
        Some(e) => Err(e),
        None => Ok((rec, u, state)),
    }
}

/// Like `run_plan`, but a divergence ends the rollout early and is returned
/// next to the frames emitted before it.
fn run_plan_partial(
    u0: &Field,
    state0: ConvLstmState,
    steps: &[(PlannedStep, bool)],
    offset0: usize,
    model: &PimrlModel,
    cfg: &ScheduleConfig,
) -> Result<(RolloutRecord, Field, ConvLstmState, Option<PimrlError>)> {
    check_model(model, cfg)?;
    let dt_macro = cfg.dt_macro();
    let mut rec = RolloutRecord::new();
    let mut u = u0.clone();
    let mut state = state0;
    let mut t = offset0;
    for (i, (step, cycle_start)) in steps.iter().enumerate() {
        if *cycle_start && cfg.reset_state_each_cycle && i > 0 {
            state = model.macro_.initial_state(&u.shape()[1..])?;
        }
        let out = match step {
            PlannedStep::Combined => combined_step(&u, &state, model, cfg),
            PlannedStep::MacroFree => model.macro_.step(&u, &state),
            PlannedStep::Micro => micro_block(&u, model, cfg).map(|f| (f, state.clone())),
        };
        let (next, next_state) = match out {
            Ok(v) => v,
            Err(e @ PimrlError::Divergence { .. }) => return Ok((rec, u, state, Some(relabel(e, i + 1)))),
            Err(e) => return Err(e),
        };
        t += step.advance();
        rec.offsets.push(t);
        rec.times.push(t as f64 * dt_macro);
        rec.frames.push(next.clone());
        rec.provenance.push(step.provenance());
        u = next;
        state = next_state;
    }
    Ok((rec, u, state, None))
}

/// One full cycle from `u` at offset 0.
pub fn pimrl_cycle(
    u: &Field,
    state: ConvLstmState,
    model: &PimrlModel,
    cfg: &ScheduleConfig,
) -> Result<(RolloutRecord, Field, ConvLstmState)> {
    let steps = plan(cfg, cfg.cycle_len())?;
    run_plan(u, state, &steps, 0, model, cfg)
}

/// Emits exactly `horizon` frames from `u0`, starting from a zero state.
pub fn rollout(u0: &Field, horizon: usize, model: &PimrlModel, cfg: &ScheduleConfig) -> Result<RolloutRecord> {
    if horizon == 0 {
        return Err(PimrlError::InvalidArgument("rollout horizon must be >= 1".into()));
    }
    let steps = plan(cfg, horizon)?;
    let state = model.macro_.initial_state(&u0.shape()[1..])?;
    Ok(run_plan(u0, state, &steps, 0, model, cfg)?.0)
}

/// Like [`rollout`], but stops at the first divergence and returns the frames
/// emitted so far together with the error.
pub fn rollout_partial(u0: &Field, horizon: usize, model: &PimrlModel, cfg: &ScheduleConfig) -> Result<(RolloutRecord, Option<PimrlError>)> {
    if horizon == 0 {
        return Err(PimrlError::InvalidArgument("rollout horizon must be >= 1".into()));
    }
    let steps = plan(cfg, horizon)?;
    let state = model.macro_.initial_state(&u0.shape()[1..])?;
    let (rec, _, _, err) = run_plan_partial(u0, state, &steps, 0, model, cfg)?;
    Ok((rec, err))
}

/// Runs `steps` inside `g`, returning the emitted frame nodes.
pub fn rollout_nodes(
    g: &mut Graph,
    model: &PimrlModel,
    w: &ModelNodes,
    u0: NodeId,
    steps: &[(PlannedStep, bool)],
    cfg: &ScheduleConfig,
) -> Result<Vec<NodeId>> {
    check_model(model, cfg)?;
    let physics = cfg.micro_physics(model);
    let spatial = g.shape(u0)[1..].to_vec();
    let needs_macro = steps.iter().any(|(s, _)| *s != PlannedStep::Micro);
    let zero = if needs_macro {
        Some(Tensor::zeros(&model.macro_.latent_shape(&spatial)?))
    } else {
        None
    };
    let fresh_state = |g: &mut Graph| zero.as_ref().map(|z| (g.constant(z.clone()), g.constant(z.clone())));
    let mut state = fresh_state(g);
    let mut u = u0;
    let mut out = Vec::with_capacity(steps.len());
    for (i, (step, cycle_start)) in steps.iter().enumerate() {
        if *cycle_start && cfg.reset_state_each_cycle && i > 0 {
            state = fresh_state(g);
        }
        let micro = |g: &mut Graph, x: NodeId| -> Result<NodeId> {
            let mut v = x;
            for _ in 0..cfg.k {
                v = model.micro.step_node(g, &w.micro, v, physics)?;
            }
            Ok(v)
        };
        u = match step {
            PlannedStep::Micro => micro(g, u)?,
            PlannedStep::Combined | PlannedStep::MacroFree => {
                let x = if *step == PlannedStep::Combined && !cfg.no_connect {
                    micro(g, u)?
                } else {
                    u
                };
                let (h, c) = state.expect("macro state");
                let (next, h2, c2) = model.macro_.step_node(g, &w.macro_, x, h, c)?;
                state = Some((h2, c2));
                next
            }
        };
        out.push(u);
    }
    Ok(out)
}
