#![allow(dead_code)]

pub mod formats;

use pimrl::macro_net::MacroConfig;
use pimrl::micro_net::MicroConfig;
use pimrl::model::{ModelConfig, PimrlModel};
use pimrl::rng::SplitMix64;
use pimrl::scheduler::{self, ScheduleConfig};
use pimrl::solvers::{CaseKind, PdeCase};
use pimrl::tensor::{gradcheck, ConvGeometry, Graph, NodeId, Tensor};
use pimrl::Result;

pub const OP_TOL: f64 = 1e-5;
pub const ROLLOUT_TOL: f64 = 1e-4;

pub fn randn(shape: &[usize], scale: f64, rng: &mut SplitMix64) -> Tensor {
    Tensor::from_fn(shape, |_| scale * rng.normal())
}

fn weighted_sum(g: &mut Graph, x: NodeId, rng: &mut SplitMix64) -> Result<NodeId> {
    // A random linear functional so every output element gets its own weight.
    let w = g.constant(randn(g.shape(x), 1.0, rng));
    let p = g.mul(x, w)?;
    Ok(g.sum(p))
}

type OpFn = Box<dyn Fn(&mut Graph, &[NodeId]) -> Result<NodeId>>;

fn op_cases(seed: u64) -> Vec<(&'static str, Vec<Tensor>, OpFn)> {
    let mut rng = SplitMix64::derive(seed, 900);
    let mut r = |s: &[usize]| randn(s, 1.0, &mut rng);
    let head = SplitMix64::derive(seed, 901);
    let reduce = move |g: &mut Graph, x: NodeId| -> Result<NodeId> {
        let mut local = head.clone();
        weighted_sum(g, x, &mut local)
    };
    macro_rules! case {
        ($name:expr, [$($shape:expr),*], |$g:ident, $v:ident| $body:expr) => {{
            let red = reduce.clone();
            let f: OpFn = Box::new(move |$g: &mut Graph, $v: &[NodeId]| {
                let out: NodeId = $body;
                red($g, out)
            });
            ($name, vec![$(r(&$shape)),*], f)
        }};
    }
    vec![
        case!("add", [[2, 16, 16], [2, 16, 16]], |g, v| g.add(v[0], v[1])?),
        case!("sub", [[2, 16, 16], [2, 16, 16]], |g, v| g.sub(v[0], v[1])?),
        case!("mul", [[2, 16, 16], [2, 16, 16]], |g, v| g.mul(v[0], v[1])?),
        case!("scalar_mul", [[2, 16, 16]], |g, v| g.scale(v[0], -1.7)),
        case!("tanh", [[2, 16, 16]], |g, v| g.tanh(v[0])),
        case!("sigmoid", [[2, 16, 16]], |g, v| g.sigmoid(v[0])),
        case!("sum", [[2, 16, 16]], |g, v| {
            let sq = g.mul(v[0], v[0])?;
            g.sum(sq)
        }),
        case!("mean", [[2, 16, 16]], |g, v| {
            let sq = g.mul(v[0], v[0])?;
            g.mean(sq)
        }),
        case!("mse", [[2, 16, 16], [2, 16, 16]], |g, v| g.mse(v[0], v[1])?),
        case!("upsample_1d", [[3, 8]], |g, v| g.upsample(v[0])?),
        case!("upsample_2d", [[3, 8, 8]], |g, v| g.upsample(v[0])?),
        case!("conv_1d_periodic", [[2, 16], [3, 2, 5], [3]], |g, v| g.conv(v[0], v[1], Some(v[2]), ConvGeometry::PERIODIC)?),
        case!("conv_2d_periodic", [[2, 16, 16], [3, 2, 3, 3], [3]], |g, v| g.conv(v[0], v[1], Some(v[2]), ConvGeometry::PERIODIC)?),
        case!("conv_2d_periodic_5x5", [[1, 12, 12], [2, 1, 5, 5]], |g, v| g.conv(v[0], v[1], None, ConvGeometry::PERIODIC)?),
        case!("conv_2d_strided", [[2, 16, 16], [4, 2, 3, 3], [4]], |g, v| g.conv(v[0], v[1], Some(v[2]), ConvGeometry::periodic_strided(2))?),
        case!("conv_2d_valid", [[2, 10, 10], [2, 2, 3, 3], [2]], |g, v| g.conv(v[0], v[1], Some(v[2]), ConvGeometry::VALID)?),
        case!("conv_1x1", [[3, 16, 16], [2, 3], [2]], |g, v| g.conv1x1(v[0], v[1], Some(v[2]))?),
    ]
}

/// Worst relative error per op for one seed.
pub fn op_errors(seed: u64) -> Vec<(&'static str, f64)> {
    op_cases(seed)
        .into_iter()
        .map(|(name, inputs, f)| (name, gradcheck(&inputs, 1e-6, f).unwrap().max_rel_err()))
        .collect()
}

fn tiny_model(case: &PdeCase, seed: u64) -> PimrlModel {
    let cfg = ModelConfig {
        micro: MicroConfig {
            n_layers: 2,
            channels: 4,
            kernel: 3,
            physics: true,
        },
        macro_: MacroConfig {
            hidden: 4,
            latent: 4,
            kernel: 3,
        },
    };
    PimrlModel::new(case, &cfg, seed).unwrap()
}

fn field(case: &PdeCase, seed: u64) -> Tensor {
    let mut rng = SplitMix64::derive(seed, 902);
    let u = randn(&case.field_shape(), 0.3, &mut rng);
    Tensor::from_fn(u.shape(), |i| 0.5 + u.data()[i])
}

/// Loss over a micro rollout of `steps` steps, checked with respect to every
/// weight and the initial field.
pub fn micro_rollout_error(kind: CaseKind, steps: usize, seed: u64) -> f64 {
    let case = PdeCase::new(kind, 16);
    let model = tiny_model(&case, seed);
    let mut inputs: Vec<Tensor> = model.micro.params().into_iter().cloned().collect();
    inputs.push(field(&case, seed));
    let mut rng = SplitMix64::derive(seed, 903);
    let targets: Vec<Tensor> = (0..steps).map(|_| randn(&case.field_shape(), 0.3, &mut rng)).collect();
    let n = inputs.len() - 1;
    let f = |g: &mut Graph, v: &[NodeId]| -> Result<NodeId> {
        let w = model.micro.bind_params(g, &v[..n])?;
        let mut u = v[n];
        let mut total: Option<NodeId> = None;
        for t in &targets {
            u = model.micro.step_node(g, &w, u, true)?;
            let tn = g.constant(t.clone());
            let l = g.mse(u, tn)?;
            total = Some(match total {
                Some(a) => g.add(a, l)?,
                None => l,
            });
        }
        Ok(total.expect("steps >= 1"))
    };
    gradcheck(&inputs, 1e-6, f).unwrap().max_rel_err()
}

/// Loss over a macro rollout with the recurrent state carried between steps.
pub fn macro_rollout_error(steps: usize, seed: u64) -> f64 {
    let case = PdeCase::new(CaseKind::Gs2d, 16);
    let model = tiny_model(&case, seed);
    let mut inputs: Vec<Tensor> = model.macro_.params().into_iter().cloned().collect();
    // Enlarge the output conv so the decoder path carries real gradient.
    let dec = inputs.len() - 2;
    let scaled = Tensor::from_fn(inputs[dec].shape(), |i| 100.0 * inputs[dec].data()[i]);
    inputs[dec] = scaled;
    inputs.push(field(&case, seed));
    let latent = model.macro_.latent_shape(&[16, 16]).unwrap();
    let mut rng = SplitMix64::derive(seed, 904);
    let targets: Vec<Tensor> = (0..steps).map(|_| randn(&case.field_shape(), 0.3, &mut rng)).collect();
    let n = inputs.len() - 1;
    let f = |g: &mut Graph, v: &[NodeId]| -> Result<NodeId> {
        let w = model.macro_.bind_params(g, &v[..n])?;
        let mut h = g.constant(Tensor::zeros(&latent));
        let mut c = g.constant(Tensor::zeros(&latent));
        let mut u = v[n];
        let mut total: Option<NodeId> = None;
        for t in &targets {
            let (next, h2, c2) = model.macro_.step_node(g, &w, u, h, c)?;
            (u, h, c) = (next, h2, c2);
            let tn = g.constant(t.clone());
            let l = g.mse(u, tn)?;
            total = Some(match total {
                Some(a) => g.add(a, l)?,
                None => l,
            });
        }
        Ok(total.expect("steps >= 1"))
    };
    gradcheck(&inputs, 1e-6, f).unwrap().max_rel_err()
}

/// Loss over a short PIMRL schedule (combined, then free macro steps).
pub fn pimrl_rollout_error(frames: usize, seed: u64) -> f64 {
    let case = PdeCase::new(CaseKind::Gs2d, 16);
    let model = tiny_model(&case, seed);
    let sched = ScheduleConfig {
        k: 2,
        n_corrected: 1,
        n_free: 2,
        ..ScheduleConfig::for_case(&case)
    };
    let steps = scheduler::plan(&sched, frames).unwrap();
    let mut inputs: Vec<Tensor> = model.params().into_iter().cloned().collect();
    let dec = inputs.len() - 2;
    let scaled = Tensor::from_fn(inputs[dec].shape(), |i| 100.0 * inputs[dec].data()[i]);
    inputs[dec] = scaled;
    inputs.push(field(&case, seed));
    let n = inputs.len() - 1;
    let mut rng = SplitMix64::derive(seed, 905);
    let targets: Vec<Tensor> = (0..frames).map(|_| randn(&case.field_shape(), 0.3, &mut rng)).collect();
    let f = |g: &mut Graph, v: &[NodeId]| -> Result<NodeId> {
        let w = model.bind_params(g, &v[..n])?;
        let out = scheduler::rollout_nodes(g, &model, &w, v[n], &steps, &sched)?;
        let mut total: Option<NodeId> = None;
        for (o, t) in out.iter().zip(&targets) {
            let tn = g.constant(t.clone());
            let l = g.mse(*o, tn)?;
            total = Some(match total {
                Some(a) => g.add(a, l)?,
                None => l,
            });
        }
        Ok(total.expect("frames >= 1"))
    };
    gradcheck(&inputs, 1e-6, f).unwrap().max_rel_err()
}

use pimrl::physics::{apply_stencil, d3x_stencil, laplacian_stencil};
use pimrl::solvers::{generate_ic, Integrator};
use std::f64::consts::PI;

fn grid_field(n: usize, dims: usize, f: impl Fn(f64, f64) -> f64) -> (Tensor, f64) {
    let h = 2.0 * PI / n as f64;
    let shape = if dims == 1 { vec![1, n] } else { vec![1, n, n] };
    let t = Tensor::from_fn(&shape, |i| {
        let (y, x) = if dims == 1 { (0, i) } else { (i / n, i % n) };
        f(x as f64 * h, y as f64 * h)
    });
    (t, h)
}

fn max_err(a: &Tensor, b: &Tensor) -> f64 {
    a.max_abs_diff(b)
}

/// Max-norm error of each stencil against the exact derivative of a Fourier
/// mode on `n` points over a 2π period.
pub fn stencil_errors(n: usize) -> Vec<(&'static str, f64)> {
    let (u1, h) = grid_field(n, 1, |x, _| (2.0 * x).sin());
    let (lap1_exact, _) = grid_field(n, 1, |x, _| -4.0 * (2.0 * x).sin());
    let (d3_exact, _) = grid_field(n, 1, |x, _| -8.0 * (2.0 * x).cos());
    let (u2, _) = grid_field(n, 2, |x, y| x.sin() * (2.0 * y).cos());
    let (lap2_exact, _) = grid_field(n, 2, |x, y| -5.0 * x.sin() * (2.0 * y).cos());
    let lap1 = apply_stencil(&u1, &laplacian_stencil(h, 1).unwrap()).unwrap();
    let lap2 = apply_stencil(&u2, &laplacian_stencil(h, 2).unwrap()).unwrap();
    let d3 = apply_stencil(&u1, &d3x_stencil(h).unwrap()).unwrap();
    vec![
        ("laplacian_1d", max_err(&lap1, &lap1_exact)),
        ("laplacian_2d", max_err(&lap2, &lap2_exact)),
        ("d3x", max_err(&d3, &d3_exact)),
    ]
}

/// Error ratios `e(n) / e(2n)` for each stencil.
pub fn stencil_ratios(n: usize) -> Vec<(&'static str, f64)> {
    stencil_errors(n)
        .into_iter()
        .zip(stencil_errors(2 * n))
        .map(|((name, a), (_, b))| (name, a / b))
        .collect()
}

pub fn desk_grid(kind: CaseKind) -> usize {
    match kind {
        CaseKind::Kdv => 128,
        _ => 32,
    }
}

fn run_micro(case: &PdeCase, u0: &Tensor, micro_steps: usize) -> Vec<f64> {
    let mut integ = Integrator::new(case).unwrap();
    let mut u = u0.data().to_vec();
    for i in 0..micro_steps {
        integ.micro_step(&mut u, case.substeps, i + 1).unwrap();
    }
    u
}

/// RMS change of the state after `micro_steps` micro intervals when the RK4
/// substep is halved.
pub fn self_convergence_rms(kind: CaseKind, micro_steps: usize) -> f64 {
    let case = PdeCase::new(kind, desk_grid(kind));
    let u0 = generate_ic(&case, 3).unwrap();
    let coarse = run_micro(&case, &u0, micro_steps);
    let fine_case = PdeCase {
        substeps: 2 * case.substeps,
        ..case.clone()
    };
    let fine = run_micro(&fine_case, &u0, micro_steps);
    let s: f64 = coarse.iter().zip(&fine).map(|(a, b)| (a - b) * (a - b)).sum();
    (s / coarse.len() as f64).sqrt()
}

/// Change of `Σu·dx` over `substeps` RK4 substeps of the KdV solver.
pub fn kdv_mass_drift(substeps: usize) -> f64 {
    let case = PdeCase::new(CaseKind::Kdv, 128);
    let u0 = generate_ic(&case, 5).unwrap();
    let mut integ = Integrator::new(&case).unwrap();
    let mut u = u0.data().to_vec();
    let mass = |u: &[f64]| u.iter().sum::<f64>() * case.dx();
    let m0 = mass(&u);
    for _ in 0..substeps {
        integ.step(&mut u).unwrap();
    }
    (mass(&u) - m0).abs()
}
