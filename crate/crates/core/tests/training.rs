use pimrl::data::{encode_checkpoint, Burst, MultiScaleTrajectory};
use pimrl::metrics::rmse;
use pimrl::micro_net::MicroConfig;
use pimrl::model::{ModelConfig, PimrlModel};
use pimrl::rng::SplitMix64;
use pimrl::scheduler::{RolloutMode, ScheduleConfig};
use pimrl::solvers::{simulate, CaseKind, PdeCase, SimConfig};
use pimrl::tensor::Tensor;
use pimrl::training::{evaluate, pretrain_micro, train_joint, TrainConfig};

/// Explicit five-point diffusion update with periodic wrap, written out
/// independently of the stencil module.
fn diffuse(case: &PdeCase, u: &Tensor) -> Tensor {
    let n = case.grid;
    let r = case.dt_micro / (case.dx() * case.dx());
    let d = [case.params["d_u"], case.params["d_v"]];
    Tensor::from_fn(u.shape(), |i| {
        let (c, y, x) = (i / (n * n), (i / n) % n, i % n);
        let at = |yy: usize, xx: usize| u.data()[c * n * n + yy * n + xx];
        let lap = at((y + 1) % n, x) + at((y + n - 1) % n, x) + at(y, (x + 1) % n) + at(y, (x + n - 1) % n) - 4.0 * at(y, x);
        at(y, x) + r * d[c] * lap
    })
}

fn diffusion_trajectory(case: &PdeCase, seed: u64, frames: usize) -> MultiScaleTrajectory {
    let mut rng = SplitMix64::new(seed);
    let n = case.grid;
    let modes: Vec<(f64, f64, f64)> = (0..6).map(|_| (rng.int_in(-3, 3) as f64, rng.int_in(-3, 3) as f64, 0.1 * rng.normal())).collect();
    let tau = 2.0 * std::f64::consts::PI / n as f64;
    let mut u = Tensor::from_fn(&case.field_shape(), |i| {
        let (y, x) = (((i / n) % n) as f64, (i % n) as f64);
        0.5 + modes.iter().map(|(a, b, c)| c * (tau * (a * x + b * y)).cos()).sum::<f64>()
    });
    let mut burst = vec![u.clone()];
    for _ in 1..frames {
        u = diffuse(case, &u);
        burst.push(u.clone());
    }
    MultiScaleTrajectory {
        case: case.name,
        field_names: case.name.field_names(),
        grid: vec![n, n],
        domain_length: case.domain_length,
        dt_micro: case.dt_micro,
        k: 15,
        seed,
        params: case.params.clone(),
        macro_frames: vec![burst[0].clone()],
        bursts: vec![Burst { start_macro_index: 0, frames: burst }],
        times: None,
    }
}

#[test]
fn pretraining_on_pure_diffusion_reaches_small_one_step_error() {
    let case = PdeCase::new(CaseKind::Gs2d, 32);
    let train: Vec<MultiScaleTrajectory> = (0..4).map(|s| diffusion_trajectory(&case, s, 4)).collect();
    let val = vec![diffusion_trajectory(&case, 100, 4)];
    let model = PimrlModel::new(&case, &ModelConfig::default(), 0).unwrap();
    let sched = ScheduleConfig::for_case(&case);
    let cfg = TrainConfig {
        epochs: 500,
        batch_size: 2,
        rollout_len: 1,
        val_every: 25,
        ..TrainConfig::pretrain()
    };
    let out = pretrain_micro(model, &train, &val, &cfg, &sched).unwrap();
    let frames = &val[0].bursts[0].frames;
    let worst = (0..frames.len() - 1)
        .map(|i| rmse(&out.model.micro.step(&frames[i]).unwrap(), &frames[i + 1]).unwrap())
        .fold(0.0, f64::max);
    assert!(worst < 1e-3, "one-step rmse {worst:e}");
    assert_eq!(out.log.skipped_batches, 0);
}

fn small_config() -> ModelConfig {
    ModelConfig {
        micro: MicroConfig { n_layers: 2, channels: 4, kernel: 3, physics: true },
        macro_: pimrl::macro_net::MacroConfig { hidden: 4, latent: 4, kernel: 3 },
    }
}

fn gs_data() -> (PdeCase, Vec<MultiScaleTrajectory>) {
    let case = PdeCase::new(CaseKind::Gs2d, 16);
    let sim = SimConfig { n_bursts: 2, ..SimConfig::new(150.0, 15) };
    (case.clone(), (0..3).map(|s| simulate(&case, s, &sim).unwrap()).collect())
}

#[test]
fn zero_epochs_returns_the_initial_weights() {
    let (case, data) = gs_data();
    let model = PimrlModel::new(&case, &small_config(), 4).unwrap();
    let sched = ScheduleConfig::for_case(&case);
    let cfg = TrainConfig { epochs: 0, ..TrainConfig::pretrain() };
    let out = pretrain_micro(model.clone(), &data[..2], &data[2..], &cfg, &sched).unwrap();
    assert_eq!(out.model, model);
    let out = train_joint(model.clone(), &data[..2], &data[2..], &TrainConfig { epochs: 0, ..TrainConfig::joint() }, &sched).unwrap();
    assert_eq!(out.model, model);
    assert_eq!(out.log.best_epoch, 0);
}

#[test]
fn training_is_bit_reproducible() {
    let (case, data) = gs_data();
    let sched = ScheduleConfig::for_case(&case);
    let run = || {
        let model = PimrlModel::new(&case, &small_config(), 9).unwrap();
        let pc = TrainConfig { epochs: 3, batch_size: 2, rollout_len: 4, seed: 9, ..TrainConfig::pretrain() };
        let pre = pretrain_micro(model, &data[..2], &data[2..], &pc, &sched).unwrap();
        let jc = TrainConfig { epochs: 3, batch_size: 1, max_cycles: 1, seed: 9, ..TrainConfig::joint() };
        let joint = train_joint(pre.model, &data[..2], &data[2..], &jc, &sched).unwrap();
        (encode_checkpoint(&pre.checkpoint).unwrap(), encode_checkpoint(&joint.checkpoint).unwrap())
    };
    assert_eq!(run(), run());
}

#[test]
fn pretraining_leaves_the_macro_network_alone() {
    let (case, data) = gs_data();
    let model = PimrlModel::new(&case, &small_config(), 2).unwrap();
    let cfg = TrainConfig { epochs: 2, rollout_len: 2, ..TrainConfig::pretrain() };
    let out = pretrain_micro(model.clone(), &data[..2], &[], &cfg, &ScheduleConfig::for_case(&case)).unwrap();
    assert_eq!(out.model.macro_, model.macro_);
    assert_ne!(out.model.micro, model.micro);
}

#[test]
fn missing_bursts_are_rejected() {
    let (case, mut data) = gs_data();
    for t in &mut data {
        t.bursts.clear();
    }
    let model = PimrlModel::new(&case, &small_config(), 2).unwrap();
    let r = pretrain_micro(model, &data, &[], &TrainConfig::pretrain(), &ScheduleConfig::for_case(&case));
    assert!(r.is_err());
}

#[test]
fn divergent_batches_are_skipped_and_counted() {
    let (case, data) = gs_data();
    let mut model = PimrlModel::new(&case, &small_config(), 2).unwrap();
    for p in model.micro.params_mut() {
        p.data_mut().iter_mut().for_each(|v| *v *= 1e3);
    }
    let cfg = TrainConfig { epochs: 2, rollout_len: 20, ..TrainConfig::pretrain() };
    let out = pretrain_micro(model.clone(), &data[..2], &data[2..], &cfg, &ScheduleConfig::for_case(&case)).unwrap();
    assert_eq!(out.log.skipped_batches, cfg.epochs * cfg.batches);
    assert_eq!(out.model, model);
}

#[test]
fn diverging_rollouts_score_as_failures() {
    let (case, data) = gs_data();
    let mut model = PimrlModel::new(&case, &small_config(), 2).unwrap();
    for p in model.micro.params_mut() {
        p.data_mut().iter_mut().for_each(|v| *v *= 1e3);
    }
    let sched = ScheduleConfig::for_case(&case).with_mode(RolloutMode::MicroOnly);
    let r = evaluate(&data[2..], &model, &sched, Some(6)).unwrap();
    let t = &r.trajectories[0];
    assert!(t.diverged_at.is_some());
    assert_eq!(t.metrics.mean_rmse, f64::INFINITY);
    assert!(t.metrics.hct < t.metrics.horizon);
}

#[test]
fn evaluation_modes_share_a_time_axis() {
    let (case, data) = gs_data();
    let model = PimrlModel::new(&case, &small_config(), 2).unwrap();
    let sched = ScheduleConfig::for_case(&case);
    let times: Vec<Vec<f64>> = [RolloutMode::Pimrl, RolloutMode::MicroOnly, RolloutMode::MacroOnly]
        .into_iter()
        .map(|m| evaluate(&data[2..], &model, &sched.with_mode(m), None).unwrap().trajectories[0].metrics.times.clone())
        .collect();
    assert_eq!(times[0], times[1]);
    assert_eq!(times[0], times[2]);
    // 20 intervals: one full cycle (8Δt, 6 frames), another (16Δt, 12), then
    // two combined steps reach 20Δt.
    assert_eq!(times[0].len(), 14);
    assert_eq!(*times[0].last().unwrap(), 20.0 * sched.dt_macro());
}
