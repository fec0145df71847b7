// Simulate a few Gray-Scott trajectories with micro bursts, store them as
// MSTD files and read them back.

use pimrl::data::{read_dir_mstd, write_mstd};
use pimrl::solvers::{simulate, CaseKind, PdeCase, SimConfig};

pub fn run() -> pimrl::Result<()> {
    let dir = std::env::temp_dir().join(format!("pimrl-generate-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| pimrl::PimrlError::io(&dir, e))?;
    let case = PdeCase::new(CaseKind::Gs2d, 32);
    println!("{} on {}², dx = {}, δt = {}, Δt = {}", case.name, case.grid, case.dx(), case.dt_micro, 15.0 * case.dt_micro);
    let sim = SimConfig {
        n_bursts: 2,
        ..SimConfig::new(300.0, 15)
    };
    for seed in 0..3 {
        let traj = simulate(&case, seed, &sim)?;
        write_mstd(&traj, &dir.join(format!("gs2d_seed{seed:06}.mstd")))?;
    }
    for (path, traj) in read_dir_mstd(&dir)? {
        let starts: Vec<usize> = traj.bursts.iter().map(|b| b.start_macro_index).collect();
        let last = traj.macro_frames.last().expect("frames");
        println!(
            "{}: {} macro frames, bursts at {:?}, final u in [{:.3}, {:.3}]",
            path.file_name().unwrap().to_string_lossy(),
            traj.macro_frames.len(),
            starts,
            last.channel(0).iter().copied().fold(f64::INFINITY, f64::min),
            last.channel(0).iter().copied().fold(f64::NEG_INFINITY, f64::max),
        );
    }
    std::fs::remove_dir_all(&dir).map_err(|e| pimrl::PimrlError::io(&dir, e))?;
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run().unwrap();
}
