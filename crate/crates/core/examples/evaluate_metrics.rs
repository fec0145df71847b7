// Score rollouts of an untrained model against a reference trajectory and
// print the error curve.

use pimrl::metrics::{hct, MetricsReport, PCC_THRESHOLD};
use pimrl::model::{ModelConfig, PimrlModel};
use pimrl::scheduler::{RolloutMode, ScheduleConfig};
use pimrl::solvers::{simulate, CaseKind, PdeCase, SimConfig};
use pimrl::training::evaluate;

pub fn run() -> pimrl::Result<()> {
    let case = PdeCase::new(CaseKind::Kdv, 64);
    let truth = simulate(&case, 1, &SimConfig { n_bursts: 0, ..SimConfig::new(6.0, 15) })?;
    let sched = ScheduleConfig::for_case(&case);

    // A perfect forecast holds correlation for the whole horizon.
    let frames = &truth.macro_frames[1..];
    let times: Vec<f64> = (1..=frames.len()).map(|i| i as f64 * sched.dt_macro()).collect();
    let exact = MetricsReport::compute(frames, frames, &times, sched.dt_macro())?;
    println!("reference vs itself: rmse {} hct {} of {}", exact.mean_rmse, exact.hct, exact.horizon);
    println!("hct of 10 matching frames at Δt = 0.15: {}", hct(&frames[..10], &frames[..10], 0.15, PCC_THRESHOLD)?);

    let model = PimrlModel::new(&case, &ModelConfig::default(), 0)?;
    for mode in [RolloutMode::Pimrl, RolloutMode::MicroOnly, RolloutMode::MacroOnly] {
        let r = evaluate(std::slice::from_ref(&truth), &model, &sched.with_mode(mode), None)?;
        let m = &r.trajectories[0].metrics;
        println!("{mode}: mean rmse {:.4}, hct {:.2}", m.mean_rmse, m.hct);
        for i in (0..m.times.len()).step_by(8) {
            println!("  t = {:>5.2}  rmse {:.4}  pcc {:?}", m.times[i], m.rmse[i], m.pcc[i].map(|p| (p * 1e4).round() / 1e4));
        }
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run().unwrap();
}
