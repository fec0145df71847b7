// End to end on a small Gray-Scott grid: simulate, pretrain the micro
// network on bursts, train the full schedule, then compare against the
// single-network rollouts on held-out trajectories.

use pimrl::data::{split_dataset, SplitSpec};
use pimrl::macro_net::MacroConfig;
use pimrl::micro_net::MicroConfig;
use pimrl::model::{ModelConfig, PimrlModel};
use pimrl::scheduler::{RolloutMode, ScheduleConfig};
use pimrl::solvers::{simulate, CaseKind, PdeCase, SimConfig};
use pimrl::training::{evaluate, pretrain_micro, train_joint, TrainConfig};

pub fn run() -> pimrl::Result<()> {
    let epochs: usize = std::env::var("PIMRL_EPOCHS").ok().and_then(|v| v.parse().ok()).unwrap_or(4);
    let case = PdeCase::new(CaseKind::Gs2d, 16);
    let sim = SimConfig { n_bursts: 3, ..SimConfig::new(300.0, 15) };
    let trajs = (0..5).map(|s| simulate(&case, s, &sim)).collect::<pimrl::Result<Vec<_>>>()?;
    let split = split_dataset(trajs, |t| t.seed, SplitSpec { train: 3, val: 1, test: 1 })?;

    let cfg = ModelConfig {
        micro: MicroConfig { n_layers: 3, channels: 4, kernel: 3, physics: true },
        macro_: MacroConfig { hidden: 4, latent: 8, kernel: 3 },
    };
    let sched = ScheduleConfig::for_case(&case);
    let model = PimrlModel::new(&case, &cfg, 0)?;
    let pre = pretrain_micro(
        model.clone(),
        &split.train,
        &split.val,
        &TrainConfig { epochs, batch_size: 2, ..TrainConfig::pretrain() },
        &sched,
    )?;
    println!("pretrain: best val {:.3e} at epoch {}", pre.log.best_val_loss, pre.log.best_epoch);
    let jc = TrainConfig { epochs, batch_size: 2, max_cycles: 2, ..TrainConfig::joint() };
    let full = train_joint(pre.model.clone(), &split.train, &split.val, &jc, &sched)?;
    println!("joint:    best val {:.3e} at epoch {}", full.log.best_val_loss, full.log.best_epoch);
    let macro_sched = sched.with_mode(RolloutMode::MacroOnly);
    let macro_only = train_joint(model, &split.train, &split.val, &jc, &macro_sched)?;

    println!("{:<11} {:>10} {:>8}", "mode", "rmse", "hct");
    for (name, m, s) in [
        ("pimrl", &full.model, sched),
        ("micro-only", &pre.model, sched.with_mode(RolloutMode::MicroOnly)),
        ("macro-only", &macro_only.model, macro_sched),
    ] {
        let r = evaluate(&split.test, m, &s, None)?;
        println!("{name:<11} {:>10.4} {:>8.1}", r.aggregate.mean_rmse, r.aggregate.mean_hct);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run().unwrap();
}
