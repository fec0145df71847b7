//! Hand-assembled reference bytes for the two container formats.

use std::collections::BTreeMap;

use pimrl::data::{Burst, Checkpoint, MultiScaleTrajectory};
use pimrl::solvers::CaseKind;
use pimrl::tensor::{AdamState, Tensor};

pub fn tiny_trajectory() -> MultiScaleTrajectory {
    let f = |a: f64| Tensor::new(vec![1, 2], vec![a, -a]).unwrap();
    MultiScaleTrajectory {
        case: CaseKind::Kdv,
        field_names: vec!["u".into()],
        grid: vec![2],
        domain_length: 0.5,
        dt_micro: 0.25,
        k: 2,
        seed: 7,
        params: BTreeMap::new(),
        macro_frames: vec![f(1.0), f(0.5)],
        bursts: vec![Burst {
            start_macro_index: 0,
            frames: vec![f(1.0), f(0.75), f(0.5)],
        }],
        times: None,
    }
}

pub fn tiny_trajectory_bytes() -> Vec<u8> {
    let header = br#"{"case":"kdv","n_fields":1,"field_names":["u"],"grid":[2],"domain_length":0.5,"dx":0.25,"dt_micro":0.25,"dt_macro":0.5,"k":2,"n_macro_frames":2,"bursts":[{"start_macro_index":0,"n_frames":3}],"dtype":"f32le","layout":"C","seed":7,"params":{}}"#;
    let mut out = b"MSTD\x01".to_vec();
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(header);
    // f32 little endian: 1.0, -1.0, 0.5, -0.5 then the burst 1.0, -1.0, 0.75, -0.75, 0.5, -0.5
    let words: [[u8; 4]; 10] = [
        [0x00, 0x00, 0x80, 0x3f],
        [0x00, 0x00, 0x80, 0xbf],
        [0x00, 0x00, 0x00, 0x3f],
        [0x00, 0x00, 0x00, 0xbf],
        [0x00, 0x00, 0x80, 0x3f],
        [0x00, 0x00, 0x80, 0xbf],
        [0x00, 0x00, 0x40, 0x3f],
        [0x00, 0x00, 0x40, 0xbf],
        [0x00, 0x00, 0x00, 0x3f],
        [0x00, 0x00, 0x00, 0xbf],
    ];
    out.extend(words.iter().flatten());
    out
}

pub fn tiny_checkpoint() -> Checkpoint {
    let w = Tensor::new(vec![2], vec![0.1, -2.5]).unwrap();
    let mut adam = AdamState::new(&[2]);
    adam.m[0] = vec![1.0, 2.0];
    adam.v[0] = vec![3.0, 4.0];
    adam.t = 3;
    Checkpoint {
        params: vec![("w".into(), w)],
        adam: Some(adam),
        epoch: 4,
        config: serde_json::json!({"lr": 0.001}),
        best_val_loss: Some(0.5),
    }
}

pub fn tiny_checkpoint_bytes() -> Vec<u8> {
    let header = br#"{"manifest":[{"name":"w","shape":[2],"offset":0},{"name":"adam.m.w","shape":[2],"offset":16},{"name":"adam.v.w","shape":[2],"offset":32}],"epoch":4,"config":{"lr":0.001},"best_val_loss":0.5,"adam":{"t":3,"beta1":0.9,"beta2":0.999,"eps":1e-8}}"#;
    let mut out = b"PMCK\x01".to_vec();
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(header);
    // f64 little endian: 0.1 = 0x3fb999999999999a
    out.extend_from_slice(&[0x9a, 0x99, 0x99, 0x99, 0x99, 0x99, 0xb9, 0x3f]);
    for v in [-2.5f64, 1.0, 2.0, 3.0, 4.0] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}
