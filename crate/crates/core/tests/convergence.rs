mod common;

use common::{kdv_mass_drift, self_convergence_rms, stencil_errors, stencil_ratios};
use pimrl::solvers::CaseKind;

#[test]
fn stencils_are_second_order() {
    for n in [16, 32, 64] {
        for (name, r) in stencil_ratios(n) {
            assert!((3.5..=4.5).contains(&r), "{name} at n={n}: ratio {r}");
        }
    }
}

#[test]
fn stencil_errors_shrink_monotonically() {
    let coarse = stencil_errors(32);
    let fine = stencil_errors(128);
    for ((name, a), (_, b)) in coarse.iter().zip(&fine) {
        assert!(b < a, "{name}");
        assert!(*b < 1e-1, "{name}: {b}");
    }
}

#[test]
fn solvers_self_converge() {
    for kind in CaseKind::ALL {
        let rms = self_convergence_rms(kind, 15);
        assert!(rms < 1e-4, "{kind}: {rms:e}");
    }
}

#[test]
fn kdv_conserves_mass() {
    let drift = kdv_mass_drift(1000);
    assert!(drift < 1e-6, "{drift:e}");
}
