mod common;

use common::formats::{tiny_checkpoint, tiny_checkpoint_bytes, tiny_trajectory, tiny_trajectory_bytes};
use pimrl::data::{decode_checkpoint, decode_mstd, encode_checkpoint, encode_mstd, read_checkpoint, read_dir_mstd, read_mstd, write_checkpoint, write_mstd};
use pimrl::model::{ModelConfig, PimrlModel};
use pimrl::solvers::{simulate, CaseKind, PdeCase, SimConfig};
use pimrl::PimrlError;
use std::path::Path;

#[test]
fn mstd_matches_reference_bytes() {
    assert_eq!(encode_mstd(&tiny_trajectory()).unwrap(), tiny_trajectory_bytes());
    assert_eq!(decode_mstd(&tiny_trajectory_bytes(), Path::new("m")).unwrap(), tiny_trajectory());
}

#[test]
fn pmck_matches_reference_bytes() {
    assert_eq!(encode_checkpoint(&tiny_checkpoint()).unwrap(), tiny_checkpoint_bytes());
    assert_eq!(decode_checkpoint(&tiny_checkpoint_bytes(), Path::new("c")).unwrap(), tiny_checkpoint());
}

#[test]
fn simulated_trajectory_file_round_trip_is_byte_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let case = PdeCase::new(CaseKind::Gs2d, 16);
    let traj = simulate(&case, 4, &SimConfig { n_bursts: 2, ..SimConfig::new(60.0, 15) }).unwrap();
    let a = dir.path().join("a.mstd");
    let b = dir.path().join("b.mstd");
    write_mstd(&traj, &a).unwrap();
    let back = read_mstd(&a).unwrap();
    write_mstd(&back, &b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(read_mstd(&b).unwrap(), back);
    assert_eq!(back.dt_macro() / back.dt_micro, 15.0);
    assert!(back.macro_frames.iter().zip(&traj.macro_frames).all(|(x, y)| x.max_abs_diff(y) < 1e-6));
    let listed = read_dir_mstd(dir.path()).unwrap();
    assert_eq!(listed.len(), 2);
}

#[test]
fn checkpoint_file_round_trip_is_byte_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let case = PdeCase::new(CaseKind::Burgers2d, 16);
    let model = PimrlModel::new(&case, &ModelConfig::default(), 3).unwrap();
    let mut ck = tiny_checkpoint();
    ck.params = model.named_params();
    ck.adam = None;
    let a = dir.path().join("a.pmck");
    let b = dir.path().join("b.pmck");
    write_checkpoint(&ck, &a).unwrap();
    let back = read_checkpoint(&a).unwrap();
    assert_eq!(back, ck);
    write_checkpoint(&back, &b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let loaded = PimrlModel::from_checkpoint(&case, &ModelConfig::default(), &back).unwrap();
    assert_eq!(loaded, model);
}

#[test]
fn kdv_full_scale_settings_keep_frame_count() {
    // 256 points, δt = 0.01, Δt = 15δt, 30 time units.
    let case = PdeCase::new(CaseKind::Kdv, 256);
    assert_eq!(case.dt_micro, 0.01);
    let traj = simulate(&case, 0, &SimConfig::new(30.0, 15)).unwrap();
    assert_eq!(traj.macro_frames.len(), 201);
    let back = decode_mstd(&encode_mstd(&traj).unwrap(), Path::new("kdv")).unwrap();
    assert_eq!(back.macro_frames.len(), 201);
    assert_eq!(back.bursts.len(), traj.bursts.len());
}

#[test]
fn truncation_and_bad_headers_are_reported() {
    let bytes = tiny_trajectory_bytes();
    let p = Path::new("m");
    assert!(matches!(decode_mstd(&bytes[..bytes.len() - 3], p), Err(PimrlError::Truncated { .. })));
    let mut v2 = bytes.clone();
    v2[4] = 2;
    assert!(matches!(decode_mstd(&v2, p), Err(PimrlError::UnsupportedVersion { .. })));
    assert!(matches!(decode_mstd(b"PMCK\x01", p), Err(PimrlError::BadMagic { .. })));
    let mut flipped = bytes.clone();
    let last = flipped.len() - 1;
    flipped[last] ^= 0x01;
    assert!(decode_mstd(&flipped, p).is_ok());
    assert!(read_mstd(Path::new("/nonexistent/x.mstd")).unwrap_err().exit_code() == 3);
}
