// Save a model and a rollout, load them back and check nothing changed.

use pimrl::data::{read_checkpoint, read_mstd, write_checkpoint, write_mstd, Checkpoint};
use pimrl::model::{ModelConfig, PimrlModel};
use pimrl::scheduler::{rollout, ScheduleConfig};
use pimrl::solvers::{generate_ic, CaseKind, PdeCase};
use pimrl::PimrlError;

pub fn run() -> pimrl::Result<()> {
    let dir = std::env::temp_dir().join(format!("pimrl-io-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| PimrlError::io(&dir, e))?;
    let case = PdeCase::new(CaseKind::Fn2d, 16);
    let cfg = ModelConfig::default();
    let model = PimrlModel::new(&case, &cfg, 5)?;

    let ck = Checkpoint {
        params: model.named_params(),
        adam: None,
        epoch: 0,
        config: serde_json::to_value(cfg)?,
        best_val_loss: None,
    };
    let ck_path = dir.join("model.pmck");
    write_checkpoint(&ck, &ck_path)?;
    let loaded = PimrlModel::from_checkpoint(&case, &cfg, &read_checkpoint(&ck_path)?)?;
    assert_eq!(loaded, model);
    println!("{}: {} tensors, {} bytes", ck_path.display(), ck.params.len(), std::fs::metadata(&ck_path).map_err(|e| PimrlError::io(&ck_path, e))?.len());

    let sched = ScheduleConfig::for_case(&case);
    let u0 = generate_ic(&case, 2)?;
    let rec = rollout(&u0, 6, &loaded, &sched)?;
    let traj = rec.to_trajectory(&u0, &case, &sched, 2);
    let path = dir.join("rollout.mstd");
    write_mstd(&traj, &path)?;
    let back = read_mstd(&path)?;
    println!("{}: times {:?}", path.display(), back.macro_times());
    assert_eq!(back.macro_frames.len(), 7);
    std::fs::remove_dir_all(&dir).map_err(|e| PimrlError::io(&dir, e))?;
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run().unwrap();
}
