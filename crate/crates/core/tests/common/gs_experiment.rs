//! Desk-scale Gray-Scott comparison of the full schedule against its
//! single-module baselines and ablations.

use pimrl::data::{split_dataset, MultiScaleTrajectory, SplitSpec};
use pimrl::macro_net::MacroConfig;
use pimrl::micro_net::MicroConfig;
use pimrl::model::{ModelConfig, PimrlModel};
use pimrl::scheduler::{RolloutMode, ScheduleConfig};
use pimrl::solvers::{simulate, CaseKind, PdeCase, SimConfig};
use pimrl::training::{evaluate, pretrain_micro, train_joint, TrainConfig};

pub const GRID: usize = 48;
pub const HORIZON: usize = 200;
/// 270 macro intervals: enough for 200 emitted frames (268 Δt) of the
/// default 2 + 4 schedule.
pub const T_END: f64 = 2025.0;
pub const TRAINING_SEEDS: [u64; 3] = [0, 1, 2];

pub struct Dataset {
    pub case: PdeCase,
    pub train: Vec<MultiScaleTrajectory>,
    pub val: Vec<MultiScaleTrajectory>,
    pub test: Vec<MultiScaleTrajectory>,
}

pub fn dataset() -> Dataset {
    let case = PdeCase::new(CaseKind::Gs2d, GRID);
    let trajs: Vec<MultiScaleTrajectory> = (0..8).map(|s| simulate(&case, s, &SimConfig::new(T_END, 15)).unwrap()).collect();
    let split = split_dataset(trajs, |t| t.seed, SplitSpec { train: 5, val: 1, test: 2 }).unwrap();
    Dataset {
        case,
        train: split.train,
        val: split.val,
        test: split.test,
    }
}

pub fn model_config() -> ModelConfig {
    ModelConfig {
        micro: MicroConfig {
            n_layers: 3,
            channels: 8,
            kernel: 3,
            physics: true,
        },
        macro_: MacroConfig {
            hidden: 8,
            latent: 16,
            kernel: 3,
        },
    }
}

pub fn pretrain_config(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 200,
        batches: 4,
        batch_size: 2,
        rollout_len: 0,
        seed,
        ..TrainConfig::pretrain()
    }
}

pub fn joint_config(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 100,
        batches: 4,
        batch_size: 2,
        max_cycles: 2,
        seed,
        ..TrainConfig::joint()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Score {
    pub rmse: f64,
    pub hct: f64,
}

#[derive(Clone, Debug)]
pub struct SeedResult {
    pub seed: u64,
    pub pimrl: Score,
    pub micro_only: Score,
    pub macro_only: Score,
    pub no_connect: Score,
    pub no_pretrain: Score,
    pub seconds: f64,
}

fn score(data: &Dataset, model: &PimrlModel, sched: &ScheduleConfig) -> Score {
    let r = evaluate(&data.test, model, sched, Some(HORIZON)).unwrap();
    Score {
        rmse: r.aggregate.mean_rmse,
        hct: r.aggregate.mean_hct,
    }
}

pub fn run_seed(data: &Dataset, seed: u64) -> SeedResult {
    let start = std::time::Instant::now();
    let sched = ScheduleConfig::for_case(&data.case);
    let init = PimrlModel::new(&data.case, &model_config(), seed).unwrap();
    let pre = pretrain_micro(init.clone(), &data.train, &data.val, &pretrain_config(seed), &sched).unwrap().model;
    let joint = |m: PimrlModel, s: &ScheduleConfig| train_joint(m, &data.train, &data.val, &joint_config(seed), s).unwrap().model;

    let full = joint(pre.clone(), &sched);
    let no_connect_sched = ScheduleConfig { no_connect: true, ..sched };
    let no_connect = joint(pre.clone(), &no_connect_sched);
    let no_pretrain = joint(init.clone(), &sched);
    let macro_sched = sched.with_mode(RolloutMode::MacroOnly);
    let macro_only = joint(init, &macro_sched);
    SeedResult {
        seed,
        pimrl: score(data, &full, &sched),
        micro_only: score(data, &pre, &sched.with_mode(RolloutMode::MicroOnly)),
        macro_only: score(data, &macro_only, &macro_sched),
        no_connect: score(data, &no_connect, &no_connect_sched),
        no_pretrain: score(data, &no_pretrain, &sched),
        seconds: start.elapsed().as_secs_f64(),
    }
}

impl SeedResult {
    /// Full schedule beats both single-module baselines on RMSE and HCT.
    pub fn core_claim(&self) -> bool {
        self.pimrl.rmse <= self.micro_only.rmse
            && self.pimrl.rmse <= self.macro_only.rmse
            && self.pimrl.hct >= self.micro_only.hct.max(self.macro_only.hct)
    }

    /// Full schedule beats both ablations on RMSE.
    pub fn ablation_claim(&self) -> bool {
        self.pimrl.rmse < self.no_connect.rmse && self.pimrl.rmse < self.no_pretrain.rmse
    }
}
