// Walk through one schedule: which module produced each frame and when.

use pimrl::model::{ModelConfig, PimrlModel};
use pimrl::scheduler::{rollout, RolloutMode, ScheduleConfig};
use pimrl::solvers::{generate_ic, CaseKind, PdeCase};

pub fn run() -> pimrl::Result<()> {
    let case = PdeCase::new(CaseKind::Burgers2d, 32);
    let model = PimrlModel::new(&case, &ModelConfig::default(), 7)?;
    let u0 = generate_ic(&case, 3)?;
    let sched = ScheduleConfig {
        n_corrected: 2,
        n_free: 3,
        ..ScheduleConfig::for_case(&case)
    };
    println!("δt = {}, k = {}, Δt = {}", sched.dt_micro, sched.k, sched.dt_macro());
    let rec = rollout(&u0, 10, &model, &sched)?;
    for i in 0..rec.len() {
        println!("{:>3}  t = {:>5.2}  {:?}", rec.offsets[i], rec.times[i], rec.provenance[i]);
    }
    for mode in [RolloutMode::MicroOnly, RolloutMode::MacroOnly] {
        let r = rollout(&u0, 4, &model, &sched.with_mode(mode))?;
        println!("{mode}: times {:?}", r.times);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run().unwrap();
}
