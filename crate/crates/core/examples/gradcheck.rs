// Compare reverse-mode gradients of one micro step against central
// differences, for every weight and the input field.

use pimrl::micro_net::MicroConfig;
use pimrl::model::{ModelConfig, PimrlModel};
use pimrl::rng::SplitMix64;
use pimrl::solvers::{CaseKind, PdeCase};
use pimrl::tensor::{gradcheck, Graph, NodeId, Tensor};

pub fn run() -> pimrl::Result<()> {
    let case = PdeCase::new(CaseKind::Burgers2d, 12);
    let cfg = ModelConfig {
        micro: MicroConfig { n_layers: 2, channels: 4, kernel: 3, physics: true },
        ..ModelConfig::default()
    };
    let model = PimrlModel::new(&case, &cfg, 0)?;
    let mut rng = SplitMix64::new(1);
    let u0 = Tensor::from_fn(&case.field_shape(), |_| rng.normal());
    let target = Tensor::from_fn(&case.field_shape(), |_| rng.normal());

    let mut inputs: Vec<Tensor> = model.micro.params().into_iter().cloned().collect();
    inputs.push(u0);
    let n = inputs.len() - 1;
    // Weight gradients carry a factor δt = 0.001, so a small step drowns in
    // cancellation; 1e-4 keeps both truncation and rounding low.
    let report = gradcheck(&inputs, 1e-4, |g: &mut Graph, v: &[NodeId]| {
        let w = model.micro.bind_params(g, &v[..n])?;
        let mut u = v[n];
        for _ in 0..3 {
            u = model.micro.step_node(g, &w, u, true)?;
        }
        let t = g.constant(target.clone());
        g.mse(u, t)
    })?;

    let mut names = model.micro.param_names();
    names.push("u0".into());
    for (name, err) in names.iter().zip(&report.rel_err) {
        println!("{name:<10} rel err {err:.2e}");
    }
    println!("worst {:.2e}", report.max_rel_err());
    assert!(report.max_rel_err() < 1e-4);
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run().unwrap();
}
