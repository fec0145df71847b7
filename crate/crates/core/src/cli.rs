//! Command implementations behind the `pimrl` binary.
//!
//! Settings resolve in three layers: built-in defaults, then an optional
//! `--config` JSON file (unknown keys are errors), then command-line flags.
//! Every command writes the resolved settings to `config.json` in its output
//! directory.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::data::{self, read_checkpoint, read_dir_mstd, read_mstd, write_checkpoint, write_mstd, MultiScaleTrajectory, SplitSpec};
use crate::error::{PimrlError, Result};
use crate::metrics::{mae, pcc, rmse};
use crate::model::{ModelConfig, PimrlModel};
use crate::scheduler::{self, RolloutMode, ScheduleConfig};
use crate::solvers::{self, CaseKind, PdeCase, SimConfig};
use crate::tensor::Field;
use crate::training::{self, TrainConfig};

/// Case description where everything but the name is optional.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseSpec {
    pub name: CaseKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain_length: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt_micro: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub substeps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warmup_micro_steps: Option<usize>,
}

impl CaseSpec {
    pub fn resolve(&self) -> Result<PdeCase> {
        let grid = self.grid.unwrap_or(match self.name {
            CaseKind::Kdv => 256,
            _ => 128,
        });
        let mut c = PdeCase::new(self.name, grid);
        if let Some(l) = self.domain_length {
            c.domain_length = l;
        }
        if let Some(p) = &self.params {
            c.params = p.clone();
        }
        if let Some(d) = self.dt_micro {
            c.dt_micro = d;
        }
        if let Some(s) = self.substeps {
            c.substeps = s;
        }
        if let Some(w) = self.warmup_micro_steps {
            c.warmup_micro_steps = w;
        }
        c.validate()?;
        Ok(c)
    }

    fn from_case(c: &PdeCase) -> Self {
        Self {
            name: c.name,
            grid: Some(c.grid),
            domain_length: Some(c.domain_length),
            params: Some(c.params.clone()),
            dt_micro: Some(c.dt_micro),
            substeps: Some(c.substeps),
            warmup_micro_steps: Some(c.warmup_micro_steps),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerateConfig {
    pub t_end: f64,
    pub n_bursts: usize,
    /// 0 means `2k + 1`.
    pub burst_len: usize,
    pub seed_base: u64,
    pub count: usize,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            t_end: 30.0,
            n_bursts: 8,
            burst_len: 0,
            seed_base: 0,
            count: 8,
        }
    }
}

fn default_pretrain() -> TrainConfig {
    TrainConfig::pretrain()
}

fn default_split() -> SplitSpec {
    SplitSpec {
        train: 5,
        val: 1,
        test: 2,
    }
}

/// Everything a run needs, as one JSON document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub case: CaseSpec,
    #[serde(default)]
    pub generate: GenerateConfig,
    /// `dt_micro` is always taken from the case.
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default = "default_pretrain")]
    pub pretrain: TrainConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_split")]
    pub split: SplitSpec,
    #[serde(default)]
    pub no_pretrain: bool,
}

impl RunConfig {
    pub fn for_case(name: CaseKind) -> Self {
        Self {
            case: CaseSpec {
                name,
                grid: None,
                domain_length: None,
                params: None,
                dt_micro: None,
                substeps: None,
                warmup_micro_steps: None,
            },
            generate: GenerateConfig::default(),
            schedule: ScheduleConfig::default(),
            model: ModelConfig::default(),
            pretrain: TrainConfig::pretrain(),
            train: TrainConfig::joint(),
            split: default_split(),
            no_pretrain: false,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| PimrlError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| PimrlError::Config(format!("{}: {e}", path.display())))
    }

    /// Fills every case field and syncs the schedule's micro step.
    pub fn resolved(mut self) -> Result<(Self, PdeCase)> {
        let case = self.case.resolve()?;
        self.case = CaseSpec::from_case(&case);
        self.schedule.dt_micro = case.dt_micro;
        self.schedule.validate()?;
        self.pretrain.validate()?;
        self.train.validate()?;
        Ok((self, case))
    }

    /// Adopts the case, grid and micro step recorded in a trajectory file.
    fn adopt_trajectory(&mut self, t: &MultiScaleTrajectory) {
        if self.case.name != t.case {
            self.case = RunConfig::for_case(t.case).case;
        }
        self.case.grid = Some(t.grid[0]);
        self.case.domain_length = Some(t.domain_length);
        self.case.params = Some(t.params.clone());
        self.case.dt_micro = Some(t.dt_micro);
        self.schedule.k = t.k;
    }
}

#[derive(Parser, Debug)]
#[command(name = "pimrl", version, about = "Multi-scale recurrent PDE forecasting: data, training, evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate trajectories and write MSTD files.
    Generate(GenerateArgs),
    /// Train the micro network on the bursts of the training split.
    Pretrain(TrainArgs),
    /// Train the full model on macro frames of the training split.
    Train(TrainArgs),
    /// Score a checkpoint (or the reference itself) on the test split.
    Eval(EvalArgs),
    /// Roll a checkpoint forward from the first frame of a trajectory.
    Rollout(RolloutArgs),
    /// Write PGM heatmaps and an error-vs-time CSV.
    Plot(PlotArgs),
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub case: Option<CaseKind>,
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long)]
    pub tend: Option<f64>,
    #[arg(long)]
    pub seed_base: Option<u64>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub dt_micro: Option<f64>,
    /// Bursts per trajectory.
    #[arg(long)]
    pub bursts: Option<usize>,
    #[arg(long)]
    pub burst_len: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory of MSTD files, split by seed.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Pretrained checkpoint to start joint training from.
    #[arg(long)]
    pub micro_ckpt: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub batches: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub rollout_len: Option<usize>,
    #[arg(long)]
    pub no_pretrain: bool,
    #[arg(long)]
    pub no_connect: bool,
    #[arg(long)]
    pub no_physics_conv: bool,
    #[arg(long)]
    pub mode: Option<RolloutMode>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    /// Model to evaluate; omitted, the reference is scored against itself.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub mode: Option<RolloutMode>,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub no_connect: bool,
}

#[derive(Args, Debug)]
pub struct RolloutArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Trajectory whose first macro frame seeds the rollout.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub horizon: usize,
    #[arg(long)]
    pub mode: Option<RolloutMode>,
    #[arg(long)]
    pub no_connect: bool,
}

#[derive(Args, Debug)]
pub struct PlotArgs {
    #[arg(long)]
    pub traj: PathBuf,
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Macro frame index to render as PGM.
    #[arg(long)]
    pub frame: Option<usize>,
    /// Write `error.csv` (needs `--truth`).
    #[arg(long)]
    pub error_curve: bool,
    #[arg(long)]
    pub out: PathBuf,
}

fn base_config(path: &Option<PathBuf>, fallback: CaseKind) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::for_case(fallback)),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| PimrlError::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| PimrlError::io(path, e))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(a) => cmd_generate(&a),
        Command::Pretrain(a) => cmd_train(&a, true),
        Command::Train(a) => cmd_train(&a, false),
        Command::Eval(a) => cmd_eval(&a),
        Command::Rollout(a) => cmd_rollout(&a),
        Command::Plot(a) => cmd_plot(&a),
    }
}

pub fn trajectory_file_name(case: CaseKind, seed: u64) -> String {
    format!("{case}_seed{seed:06}.mstd")
}

pub fn cmd_generate(a: &GenerateArgs) -> Result<()> {
    let mut cfg = base_config(&a.config, a.case.unwrap_or(CaseKind::Kdv))?;
    if let Some(c) = a.case {
        if c != cfg.case.name {
            cfg.case = RunConfig::for_case(c).case;
        }
    }
    if a.grid.is_some() {
        cfg.case.grid = a.grid;
        cfg.case.domain_length = None;
    }
    if a.dt_micro.is_some() {
        cfg.case.dt_micro = a.dt_micro;
    }
    if let Some(k) = a.k {
        cfg.schedule.k = k;
    }
    let g = &mut cfg.generate;
    g.t_end = a.tend.unwrap_or(g.t_end);
    g.seed_base = a.seed_base.unwrap_or(g.seed_base);
    g.count = a.count.unwrap_or(g.count);
    g.n_bursts = a.bursts.unwrap_or(g.n_bursts);
    g.burst_len = a.burst_len.unwrap_or(g.burst_len);
    let (cfg, case) = cfg.resolved()?;
    let gen = &cfg.generate;
    let k = cfg.schedule.k;
    let sim = SimConfig {
        t_end: gen.t_end,
        k,
        n_bursts: gen.n_bursts,
        burst_len: if gen.burst_len == 0 { 2 * k + 1 } else { gen.burst_len },
    };
    ensure_dir(&a.out_dir)?;
    write_json(&a.out_dir.join("config.json"), &cfg)?;
    for i in 0..gen.count {
        let seed = gen.seed_base + i as u64;
        let traj = solvers::simulate(&case, seed, &sim)?;
        let path = a.out_dir.join(trajectory_file_name(case.name, seed));
        write_mstd(&traj, &path)?;
        println!("{}", path.display());
    }
    Ok(())
}

struct LoadedData {
    cfg: RunConfig,
    case: PdeCase,
    train: Vec<MultiScaleTrajectory>,
    val: Vec<MultiScaleTrajectory>,
    test: Vec<MultiScaleTrajectory>,
}

fn load_data(config: &Option<PathBuf>, dir: &Path, mutate: impl FnOnce(&mut RunConfig)) -> Result<LoadedData> {
    let files = read_dir_mstd(dir)?;
    let first = files
        .first()
        .ok_or_else(|| PimrlError::InvalidArgument(format!("no .mstd files in {}", dir.display())))?;
    // Without --config, reuse the one `generate` left next to the data.
    let beside = dir.join("config.json");
    let config = match config {
        None if beside.is_file() => Some(beside),
        other => other.clone(),
    };
    let mut cfg = base_config(&config, first.1.case)?;
    cfg.adopt_trajectory(&first.1);
    mutate(&mut cfg);
    let (cfg, case) = cfg.resolved()?;
    let trajs: Vec<MultiScaleTrajectory> = files.into_iter().map(|(_, t)| t).collect();
    for t in &trajs {
        if t.case != case.name || t.grid[0] != case.grid || t.k != cfg.schedule.k {
            return Err(PimrlError::InvalidArgument(format!(
                "{}: trajectories mix cases, grids or k",
                dir.display()
            )));
        }
    }
    let split = data::split_dataset(trajs, |t| t.seed, cfg.split)?;
    Ok(LoadedData {
        cfg,
        case,
        train: split.train,
        val: split.val,
        test: split.test,
    })
}

pub fn cmd_train(a: &TrainArgs, pretrain: bool) -> Result<()> {
    let data = load_data(&a.config, &a.data, |cfg| {
        let t = if pretrain { &mut cfg.pretrain } else { &mut cfg.train };
        t.epochs = a.epochs.unwrap_or(t.epochs);
        if let Some(lr) = a.lr {
            t.lr.lr0 = lr;
        }
        t.seed = a.seed.unwrap_or(t.seed);
        t.batches = a.batches.unwrap_or(t.batches);
        t.batch_size = a.batch_size.unwrap_or(t.batch_size);
        t.rollout_len = a.rollout_len.unwrap_or(t.rollout_len);
        cfg.no_pretrain |= a.no_pretrain;
        cfg.schedule.no_connect |= a.no_connect;
        cfg.schedule.no_physics_conv |= a.no_physics_conv;
        if let Some(m) = a.mode {
            cfg.schedule = cfg.schedule.with_mode(m);
        }
    })?;
    let cfg = &data.cfg;
    let tcfg = if pretrain { &cfg.pretrain } else { &cfg.train };
    let mut model = PimrlModel::new(&data.case, &cfg.model, tcfg.seed)?;
    if !pretrain && !cfg.no_pretrain {
        if let Some(p) = &a.micro_ckpt {
            let ck = read_checkpoint(p)?;
            let loaded = PimrlModel::from_checkpoint(&data.case, &cfg.model, &ck)?;
            model.micro = loaded.micro;
        }
    }
    let outcome = if pretrain {
        training::pretrain_micro(model, &data.train, &data.val, tcfg, &cfg.schedule)?
    } else {
        training::train_joint(model, &data.train, &data.val, tcfg, &cfg.schedule)?
    };
    ensure_dir(&a.out)?;
    write_json(&a.out.join("config.json"), cfg)?;
    write_json(&a.out.join("log.json"), &outcome.log)?;
    let mut ck = outcome.checkpoint;
    ck.config = serde_json::to_value(cfg)?;
    let name = if pretrain { "micro.pmck" } else { "model.pmck" };
    write_checkpoint(&ck, &a.out.join(name))?;
    println!(
        "best validation loss {:.6e} at epoch {} ({} skipped batches)",
        outcome.log.best_val_loss, outcome.log.best_epoch, outcome.log.skipped_batches
    );
    Ok(())
}

fn model_from_ckpt(path: &Path, case: &PdeCase, cfg: &RunConfig) -> Result<PimrlModel> {
    let ck = read_checkpoint(path)?;
    let model_cfg = ck
        .config
        .get("model")
        .map(|v| serde_json::from_value::<ModelConfig>(v.clone()))
        .transpose()?
        .unwrap_or(cfg.model);
    PimrlModel::from_checkpoint(case, &model_cfg, &ck)
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let data = load_data(&a.config, &a.data, |cfg| {
        if let Some(m) = a.mode {
            cfg.schedule = cfg.schedule.with_mode(m);
        }
        cfg.schedule.no_connect |= a.no_connect;
    })?;
    ensure_dir(&a.out)?;
    write_json(&a.out.join("config.json"), &data.cfg)?;
    let sched = &data.cfg.schedule;
    let report = match &a.ckpt {
        Some(p) => {
            let model = model_from_ckpt(p, &data.case, &data.cfg)?;
            serde_json::to_value(training::evaluate(&data.test, &model, sched, a.horizon)?)?
        }
        None => {
            let mut reports = Vec::new();
            for t in &data.test {
                let mut offs = training::evaluation_offsets(sched, t.macro_frames.len())?;
                if let Some(h) = a.horizon {
                    offs.truncate(h);
                }
                let frames: Vec<Field> = offs.iter().map(|o| t.macro_frames[*o].clone()).collect();
                let times: Vec<f64> = offs.iter().map(|o| *o as f64 * sched.dt_macro()).collect();
                reports.push(crate::metrics::MetricsReport::compute(&frames, &frames, &times, sched.dt_macro())?);
            }
            serde_json::json!({ "mode": "reference", "trajectories": reports })
        }
    };
    write_json(&a.out.join("report.json"), &report)?;
    println!("{}", a.out.join("report.json").display());
    Ok(())
}

pub fn cmd_rollout(a: &RolloutArgs) -> Result<()> {
    let input = read_mstd(&a.input)?;
    let mut cfg = base_config(&a.config, input.case)?;
    cfg.adopt_trajectory(&input);
    if let Some(m) = a.mode {
        cfg.schedule = cfg.schedule.with_mode(m);
    }
    cfg.schedule.no_connect |= a.no_connect;
    let (cfg, case) = cfg.resolved()?;
    let model = model_from_ckpt(&a.ckpt, &case, &cfg)?;
    let u0 = &input.macro_frames[0];
    let rec = scheduler::rollout(u0, a.horizon, &model, &cfg.schedule)?;
    let traj = rec.to_trajectory(u0, &case, &cfg.schedule, input.seed);
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
        write_json(&dir.join("config.json"), &cfg)?;
    }
    write_mstd(&traj, &a.out)?;
    println!("{}", a.out.display());
    Ok(())
}

/// 8-bit binary PGM of one channel, min–max scaled to 0..=255 (a constant
/// channel maps to 0). 1D fields become one-row images.
pub fn pgm_bytes(field: &Field, channel: usize) -> Vec<u8> {
    let sp = field.spatial();
    let (h, w) = if sp.len() == 1 { (1, sp[0]) } else { (sp[0], sp[1]) };
    let data = field.channel(channel);
    let lo = data.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(data.iter().map(|v| {
        if hi > lo {
            (255.0 * (v - lo) / (hi - lo)).round() as u8
        } else {
            0
        }
    }));
    out
}

/// `t,rmse,mae,pcc` rows for every frame of `pred`, matched to `truth` by time.
pub fn error_csv(pred: &MultiScaleTrajectory, truth: &MultiScaleTrajectory) -> Result<String> {
    let dt = truth.dt_macro();
    let mut out = String::from("t,rmse,mae,pcc\n");
    for (t, frame) in pred.macro_times().into_iter().zip(&pred.macro_frames) {
        let idx = (t / dt).round() as usize;
        let reference = truth
            .macro_frames
            .get(idx)
            .ok_or_else(|| PimrlError::InvalidArgument(format!("reference has no frame at t = {t}")))?;
        let p = pcc(frame, reference)?.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!("{t},{},{},{p}\n", rmse(frame, reference)?, mae(frame, reference)?));
    }
    Ok(out)
}

pub fn cmd_plot(a: &PlotArgs) -> Result<()> {
    let traj = read_mstd(&a.traj)?;
    ensure_dir(&a.out)?;
    if let Some(i) = a.frame {
        let frame = traj.macro_frames.get(i).ok_or_else(|| {
            PimrlError::InvalidArgument(format!("frame {i} out of range (0..{})", traj.macro_frames.len()))
        })?;
        for (c, name) in traj.field_names.iter().enumerate() {
            let path = a.out.join(format!("frame{i:04}_{name}.pgm"));
            let mut f = fs::File::create(&path).map_err(|e| PimrlError::io(&path, e))?;
            f.write_all(&pgm_bytes(frame, c)).map_err(|e| PimrlError::io(&path, e))?;
            println!("{}", path.display());
        }
    }
    if a.error_curve {
        let truth_path = a
            .truth
            .as_ref()
            .ok_or_else(|| PimrlError::Config("--error-curve needs --truth".into()))?;
        let truth = read_mstd(truth_path)?;
        let path = a.out.join("error.csv");
        fs::write(&path, error_csv(&traj, &truth)?).map_err(|e| PimrlError::io(&path, e))?;
        println!("{}", path.display());
    }
    Ok(())
}
