use proptest::prelude::*;

use pimrl::data::{decode_mstd, encode_mstd, split_dataset, Burst, SplitSpec};
use pimrl::metrics::{hct, mae, pcc, rmse};
use pimrl::micro_net::MicroConfig;
use pimrl::model::{ModelConfig, PimrlModel};
use pimrl::physics::{apply_stencil, laplacian_stencil};
use pimrl::rng::SplitMix64;
use pimrl::scheduler::{emission_offsets, ScheduleConfig};
use pimrl::solvers::{pde_rhs, CaseKind, PdeCase};
use pimrl::tensor::{conv_forward, ConvGeometry, Tensor};
use pimrl::training::mse_loss;
use std::path::Path;

fn field(shape: &'static [usize]) -> impl Strategy<Value = Tensor> {
    let n: usize = shape.iter().product();
    prop::collection::vec(-2.0f64..2.0, n).prop_map(move |d| Tensor::new(shape.to_vec(), d).unwrap())
}

fn close(a: &Tensor, b: &Tensor, tol: f64) -> bool {
    a.max_abs_diff(b) <= tol
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn periodic_conv_commutes_with_shifts(x in field(&[2, 8, 8]), k in field(&[3, 2, 3, 3]), sx in -8isize..8, sy in -8isize..8) {
        let shift = |t: &Tensor| t.roll(0, sy).roll(1, sx);
        let a = conv_forward(&shift(&x), &k, None, ConvGeometry::PERIODIC).unwrap();
        let b = shift(&conv_forward(&x, &k, None, ConvGeometry::PERIODIC).unwrap());
        prop_assert!(close(&a, &b, 1e-12));
    }

    #[test]
    fn laplacian_annihilates_constants_and_commutes_with_shifts(x in field(&[1, 8, 8]), c in -3.0f64..3.0, s in -8isize..8) {
        let lap = laplacian_stencil(0.1, 2).unwrap();
        let constant = Tensor::full(&[1, 8, 8], c);
        prop_assert!(apply_stencil(&constant, &lap).unwrap().data().iter().all(|v| v.abs() < 1e-9));
        let a = apply_stencil(&x.roll(1, s), &lap).unwrap();
        let b = apply_stencil(&x, &lap).unwrap().roll(1, s);
        prop_assert!(close(&a, &b, 1e-9));
    }

    #[test]
    fn micro_step_commutes_with_shifts(x in field(&[2, 8, 8]), seed in 0u64..1000, s in -8isize..8) {
        let case = PdeCase::new(CaseKind::Gs2d, 8);
        let cfg = ModelConfig { micro: MicroConfig { n_layers: 2, channels: 4, kernel: 3, physics: true }, ..ModelConfig::default() };
        let m = PimrlModel::new(&case, &cfg, seed).unwrap();
        let a = m.micro.step(&x.roll(0, s)).unwrap();
        let b = m.micro.step(&x).unwrap().roll(0, s);
        prop_assert!(close(&a, &b, 1e-12));
    }

    #[test]
    fn reference_rhs_commutes_with_shifts(x in field(&[2, 8, 8]), s in -8isize..8) {
        let case = PdeCase::new(CaseKind::Burgers2d, 8);
        let a = pde_rhs(&case, &x.roll(1, s)).unwrap();
        let b = pde_rhs(&case, &x).unwrap().roll(1, s);
        prop_assert!(close(&a, &b, 1e-9));
    }

    #[test]
    fn error_metric_relations(a in field(&[2, 6, 6]), b in field(&[2, 6, 6])) {
        let r = rmse(&a, &b).unwrap();
        let m = mae(&a, &b).unwrap();
        prop_assert!(r >= 0.0 && m >= 0.0);
        prop_assert!(m <= r + 1e-12);
        prop_assert!((r - rmse(&b, &a).unwrap()).abs() < 1e-15);
        prop_assert_eq!(rmse(&a, &a).unwrap(), 0.0);
        let l = mse_loss(std::slice::from_ref(&a), std::slice::from_ref(&b)).unwrap();
        prop_assert!((l - r * r).abs() < 1e-12 * (1.0 + l));
    }

    #[test]
    fn pcc_is_bounded_and_affine_invariant(a in field(&[1, 6, 6]), b in field(&[1, 6, 6]), scale in 0.1f64..10.0, off in -5.0f64..5.0) {
        if let Some(p) = pcc(&a, &b).unwrap() {
            prop_assert!((-1.0..=1.0).contains(&p));
            let b2 = Tensor::from_fn(b.shape(), |i| scale * b.data()[i] + off);
            let p2 = pcc(&a, &b2).unwrap().unwrap();
            prop_assert!((p - p2).abs() < 1e-9);
            prop_assert!((p - pcc(&b, &a).unwrap().unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn hct_is_bounded_by_the_horizon(frames in prop::collection::vec(field(&[1, 4, 4]), 1..8), dt in 0.01f64..2.0) {
        let mut rng = SplitMix64::new(7);
        let truth: Vec<Tensor> = frames.iter().map(|f| Tensor::from_fn(f.shape(), |_| rng.normal())).collect();
        let h = hct(&frames, &truth, dt, 0.8).unwrap();
        prop_assert!(h >= 0.0 && h <= frames.len() as f64 * dt + 1e-12);
        prop_assert!((hct(&truth, &truth, dt, 0.8).unwrap() - frames.len() as f64 * dt).abs() < 1e-12);
    }

    #[test]
    fn emission_offsets_increase_and_cover_cycles(nc in 0usize..4, nf in 0usize..5, k in 1usize..20, horizon in 1usize..60) {
        prop_assume!(nc + nf > 0);
        let cfg = ScheduleConfig { k, n_corrected: nc, n_free: nf, ..ScheduleConfig::default() };
        let off = emission_offsets(&cfg, horizon).unwrap();
        prop_assert_eq!(off.len(), horizon);
        prop_assert!(off.windows(2).all(|w| w[1] > w[0]));
        let cycles = horizon / (nc + nf);
        if cycles > 0 {
            prop_assert_eq!(off[cycles * (nc + nf) - 1], cycles * (2 * nc + nf));
        }
    }

    #[test]
    fn split_is_a_disjoint_partition(seeds in prop::collection::btree_set(0u64..1000, 3..20), tr in 0usize..5, va in 0usize..5, te in 0usize..5) {
        let items: Vec<u64> = seeds.iter().rev().copied().collect();
        let spec = SplitSpec { train: tr, val: va, test: te };
        match split_dataset(items.clone(), |s| *s, spec) {
            Ok(s) => {
                prop_assert_eq!((s.train.len(), s.val.len(), s.test.len()), (tr, va, te));
                let mut all: Vec<u64> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
                let n = all.len();
                all.sort();
                all.dedup();
                prop_assert_eq!(all.len(), n);
                prop_assert!(s.train.iter().all(|a| s.val.iter().chain(&s.test).all(|b| a < b)));
            }
            Err(_) => prop_assert!(tr + va + te > items.len()),
        }
    }

    #[test]
    fn mstd_write_read_write_is_idempotent(seed in 0u64..1000, n_frames in 1usize..5, burst_len in 0usize..4, vals in prop::collection::vec(-1e3f64..1e3, 2 * 4 * 4)) {
        let case = PdeCase::new(CaseKind::Fn2d, 4);
        let frame = |i: usize| Tensor::from_fn(&case.field_shape(), |j| vals[j] * (i as f64 + 1.0).sqrt() / 3.0);
        let bursts = if burst_len > 0 {
            vec![Burst { start_macro_index: 0, frames: (0..burst_len).map(frame).collect() }]
        } else {
            vec![]
        };
        let traj = pimrl::data::MultiScaleTrajectory {
            case: CaseKind::Fn2d,
            field_names: CaseKind::Fn2d.field_names(),
            grid: vec![4, 4],
            domain_length: case.domain_length,
            dt_micro: case.dt_micro,
            k: 15,
            seed,
            params: case.params.clone(),
            macro_frames: (0..n_frames).map(frame).collect(),
            bursts,
            times: None,
        };
        let once = encode_mstd(&traj).unwrap();
        let back = decode_mstd(&once, Path::new("mem")).unwrap();
        let twice = encode_mstd(&back).unwrap();
        prop_assert_eq!(&once, &twice);
        prop_assert_eq!(decode_mstd(&twice, Path::new("mem")).unwrap(), back);
    }
}
