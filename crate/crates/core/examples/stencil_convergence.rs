// Error of the finite-difference stencils on a Fourier mode as the grid is
// refined. Each halving of h should cut the error by about 4.

use std::f64::consts::PI;

use pimrl::physics::{apply_stencil, d3x_stencil, laplacian_stencil};
use pimrl::tensor::Tensor;

fn errors(n: usize) -> pimrl::Result<(f64, f64)> {
    let h = 2.0 * PI / n as f64;
    let x = |i: usize| i as f64 * h;
    let u = Tensor::from_fn(&[1, n], |i| (3.0 * x(i)).sin());
    let lap = apply_stencil(&u, &laplacian_stencil(h, 1)?)?;
    let d3 = apply_stencil(&u, &d3x_stencil(h)?)?;
    let mut e_lap = 0.0f64;
    let mut e_d3 = 0.0f64;
    for i in 0..n {
        e_lap = e_lap.max((lap.data()[i] + 9.0 * (3.0 * x(i)).sin()).abs());
        e_d3 = e_d3.max((d3.data()[i] + 27.0 * (3.0 * x(i)).cos()).abs());
    }
    Ok((e_lap, e_d3))
}

pub fn run() -> pimrl::Result<()> {
    println!("{:>5} {:>12} {:>7} {:>12} {:>7}", "n", "laplacian", "ratio", "d3x", "ratio");
    let mut prev: Option<(f64, f64)> = None;
    for n in [16, 32, 64, 128, 256] {
        let (a, b) = errors(n)?;
        let (ra, rb) = prev.map_or((f64::NAN, f64::NAN), |(pa, pb)| (pa / a, pb / b));
        println!("{n:>5} {a:>12.4e} {ra:>7.3} {b:>12.4e} {rb:>7.3}");
        prev = Some((a, b));
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run().unwrap();
}
