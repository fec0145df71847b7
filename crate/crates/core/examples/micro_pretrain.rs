// Pretrain the micro network on bursts of pure diffusion. The fixed
// Laplacian conv already reproduces the data, so training only has to drive
// the learned block towards zero.

use pimrl::data::{Burst, MultiScaleTrajectory};
use pimrl::micro_net::MicroConfig;
use pimrl::model::{ModelConfig, PimrlModel};
use pimrl::rng::SplitMix64;
use pimrl::scheduler::ScheduleConfig;
use pimrl::solvers::{CaseKind, PdeCase};
use pimrl::tensor::Tensor;
use pimrl::training::{pretrain_micro, TrainConfig};

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

fn trajectory(case: &PdeCase, seed: u64, frames: usize) -> MultiScaleTrajectory {
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

pub fn run() -> pimrl::Result<()> {
    let case = PdeCase::new(CaseKind::Gs2d, 16);
    let train: Vec<MultiScaleTrajectory> = (0..3).map(|s| trajectory(&case, s, 6)).collect();
    let val = vec![trajectory(&case, 10, 6)];
    let cfg = ModelConfig {
        micro: MicroConfig { n_layers: 2, channels: 4, kernel: 3, physics: true },
        ..ModelConfig::default()
    };
    let model = PimrlModel::new(&case, &cfg, 0)?;
    let sched = ScheduleConfig::for_case(&case);
    let tc = TrainConfig {
        epochs: 40,
        rollout_len: 1,
        val_every: 10,
        ..TrainConfig::pretrain()
    };
    let out = pretrain_micro(model, &train, &val, &tc, &sched)?;
    for (epoch, loss) in &out.log.val_loss {
        println!("epoch {epoch:>3}  val mse {loss:.3e}");
    }
    let b = &val[0].bursts[0].frames;
    let next = out.model.micro.step(&b[0])?;
    println!("one-step rmse {:.3e}", pimrl::metrics::rmse(&next, &b[1])?);
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run().unwrap();
}
