//! On-disk containers and dataset splitting.
//!
//! # MSTD (trajectory) layout
//!
//! ```text
//! "MSTD" | version u8 = 1 | header_len u32 LE | header (UTF-8 JSON) | payload
//! ```
//!
//! The payload holds every macro frame, then every burst frame, each frame
//! `n_fields × extents` 32-bit little-endian floats in C order. There is no
//! checksum: a flipped payload byte goes unnoticed, a short payload does not.
//!
//! # PMCK (checkpoint) layout
//!
//! ```text
//! "PMCK" | version u8 = 1 | header_len u32 LE | header (UTF-8 JSON) | payload
//! ```
//!
//! The header carries a manifest of `(name, shape, offset)` entries whose byte
//! ranges tile the 64-bit little-endian payload exactly.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{PimrlError, Result};
use crate::solvers::CaseKind;
use crate::tensor::{AdamState, Field, Tensor};

pub const MSTD_MAGIC: &[u8; 4] = b"MSTD";
pub const PMCK_MAGIC: &[u8; 4] = b"PMCK";
pub const FORMAT_VERSION: u8 = 1;

/// A run of consecutive micro-spaced frames starting on a macro frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Burst {
    pub start_macro_index: usize,
    pub frames: Vec<Field>,
}

/// One simulated run: macro frames every `k·dt_micro` plus micro bursts.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiScaleTrajectory {
    pub case: CaseKind,
    pub field_names: Vec<String>,
    pub grid: Vec<usize>,
    pub domain_length: f64,
    pub dt_micro: f64,
    pub k: usize,
    pub seed: u64,
    pub params: BTreeMap<String, f64>,
    pub macro_frames: Vec<Field>,
    pub bursts: Vec<Burst>,
    /// Explicit frame times; set for model rollouts whose frames are not
    /// evenly spaced.
    pub times: Option<Vec<f64>>,
}

impl MultiScaleTrajectory {
    pub fn n_fields(&self) -> usize {
        self.field_names.len()
    }

    pub fn dt_macro(&self) -> f64 {
        self.k as f64 * self.dt_micro
    }

    pub fn dx(&self) -> f64 {
        self.domain_length / self.grid[0] as f64
    }

    pub fn frame_shape(&self) -> Vec<usize> {
        let mut s = vec![self.n_fields()];
        s.extend(&self.grid);
        s
    }

    /// Time of every macro frame.
    pub fn macro_times(&self) -> Vec<f64> {
        match &self.times {
            Some(t) => t.clone(),
            None => (0..self.macro_frames.len()).map(|i| i as f64 * self.dt_macro()).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let shape = self.frame_shape();
        let bad = |reason: String| Err(PimrlError::InvalidArgument(format!("trajectory: {reason}")));
        if self.grid.is_empty() || self.grid.len() > 2 || self.n_fields() != self.case.n_fields() {
            return bad(format!("grid {:?} / fields {:?} do not fit case {}", self.grid, self.field_names, self.case));
        }
        if self.k == 0 || !(self.dt_micro > 0.0) {
            return bad("k and dt_micro must be positive".into());
        }
        let frames = self.macro_frames.iter().chain(self.bursts.iter().flat_map(|b| b.frames.iter()));
        for f in frames {
            if f.shape() != shape.as_slice() {
                return bad(format!("frame shape {:?}, expected {shape:?}", f.shape()));
            }
        }
        if let Some(t) = &self.times {
            if t.len() != self.macro_frames.len() {
                return bad(format!("{} times for {} frames", t.len(), self.macro_frames.len()));
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct BurstHeader {
    start_macro_index: usize,
    n_frames: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MstdHeader {
    case: CaseKind,
    n_fields: usize,
    field_names: Vec<String>,
    grid: Vec<usize>,
    domain_length: f64,
    dx: f64,
    dt_micro: f64,
    dt_macro: f64,
    k: usize,
    n_macro_frames: usize,
    bursts: Vec<BurstHeader>,
    dtype: String,
    layout: String,
    seed: u64,
    params: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    times: Option<Vec<f64>>,
}

fn framed(magic: &[u8; 4], header: &[u8], payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(9 + header.len() + payload.len());
    out.extend_from_slice(magic);
    out.push(FORMAT_VERSION);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(header);
    out.extend_from_slice(payload);
    out
}

/// Splits a framed file into `(header, payload)` after checking magic and version.
fn unframe<'a>(path: &Path, bytes: &'a [u8], magic: &'static [u8; 4], name: &'static str) -> Result<(&'a [u8], &'a [u8])> {
    if bytes.len() < 4 || &bytes[..4] != magic {
        return Err(PimrlError::BadMagic {
            path: path.to_path_buf(),
            expected: name,
        });
    }
    if bytes.len() < 9 {
        return Err(PimrlError::Truncated {
            path: path.to_path_buf(),
            expected: 9,
            found: bytes.len(),
        });
    }
    if bytes[4] != FORMAT_VERSION {
        return Err(PimrlError::UnsupportedVersion {
            path: path.to_path_buf(),
            version: bytes[4],
        });
    }
    let hlen = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes")) as usize;
    if bytes.len() < 9 + hlen {
        return Err(PimrlError::Truncated {
            path: path.to_path_buf(),
            expected: 9 + hlen,
            found: bytes.len(),
        });
    }
    Ok((&bytes[9..9 + hlen], &bytes[9 + hlen..]))
}

fn inconsistent(path: &Path, reason: impl Into<String>) -> PimrlError {
    PimrlError::InconsistentHeader {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn write_synced(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = File::create(path).map_err(|e| PimrlError::io(path, e))?;
    f.write_all(bytes).map_err(|e| PimrlError::io(path, e))?;
    f.sync_all().map_err(|e| PimrlError::io(path, e))
}

/// Serializes a trajectory to MSTD bytes (frames quantized to f32).
pub fn encode_mstd(traj: &MultiScaleTrajectory) -> Result<Vec<u8>> {
    traj.validate()?;
    let header = MstdHeader {
        case: traj.case,
        n_fields: traj.n_fields(),
        field_names: traj.field_names.clone(),
        grid: traj.grid.clone(),
        domain_length: traj.domain_length,
        dx: traj.dx(),
        dt_micro: traj.dt_micro,
        dt_macro: traj.dt_macro(),
        k: traj.k,
        n_macro_frames: traj.macro_frames.len(),
        bursts: traj
            .bursts
            .iter()
            .map(|b| BurstHeader {
                start_macro_index: b.start_macro_index,
                n_frames: b.frames.len(),
            })
            .collect(),
        dtype: "f32le".into(),
        layout: "C".into(),
        seed: traj.seed,
        params: traj.params.clone(),
        times: traj.times.clone(),
    };
    let header = serde_json::to_vec(&header)?;
    let frames = traj.macro_frames.iter().chain(traj.bursts.iter().flat_map(|b| b.frames.iter()));
    let mut payload = Vec::new();
    for f in frames {
        for v in f.data() {
            payload.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    Ok(framed(MSTD_MAGIC, &header, &payload))
}

/// Parses MSTD bytes; `path` is only used in error messages.
pub fn decode_mstd(bytes: &[u8], path: &Path) -> Result<MultiScaleTrajectory> {
    let (header, payload) = unframe(path, bytes, MSTD_MAGIC, "MSTD")?;
    let h: MstdHeader = serde_json::from_slice(header).map_err(|e| inconsistent(path, e.to_string()))?;
    if h.dtype != "f32le" || h.layout != "C" {
        return Err(inconsistent(path, format!("dtype {} / layout {}", h.dtype, h.layout)));
    }
    if h.n_fields != h.field_names.len() || h.n_fields != h.case.n_fields() {
        return Err(inconsistent(path, "n_fields does not match field_names and case"));
    }
    if h.grid.is_empty() || h.grid.len() > 2 || h.grid.contains(&0) {
        return Err(inconsistent(path, format!("grid {:?}", h.grid)));
    }
    if h.k == 0 || h.dt_macro != h.k as f64 * h.dt_micro {
        return Err(inconsistent(path, "dt_macro must equal k * dt_micro"));
    }
    if h.dx != h.domain_length / h.grid[0] as f64 {
        return Err(inconsistent(path, "dx must equal domain_length / grid"));
    }
    if let Some(t) = &h.times {
        if t.len() != h.n_macro_frames {
            return Err(inconsistent(path, "times length differs from n_macro_frames"));
        }
    }
    let mut shape = vec![h.n_fields];
    shape.extend(&h.grid);
    let frame_len: usize = shape.iter().product();
    let n_frames = h.n_macro_frames + h.bursts.iter().map(|b| b.n_frames).sum::<usize>();
    let expected = 4 * n_frames * frame_len;
    if payload.len() != expected {
        return Err(PimrlError::Truncated {
            path: path.to_path_buf(),
            expected,
            found: payload.len(),
        });
    }
    let mut chunks = payload.chunks_exact(4 * frame_len).map(|c| {
        let data = c
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
            .collect();
        Tensor::new(shape.clone(), data).expect("frame length checked")
    });
    let macro_frames = chunks.by_ref().take(h.n_macro_frames).collect();
    let bursts = h
        .bursts
        .iter()
        .map(|b| Burst {
            start_macro_index: b.start_macro_index,
            frames: chunks.by_ref().take(b.n_frames).collect(),
        })
        .collect();
    Ok(MultiScaleTrajectory {
        case: h.case,
        field_names: h.field_names,
        grid: h.grid,
        domain_length: h.domain_length,
        dt_micro: h.dt_micro,
        k: h.k,
        seed: h.seed,
        params: h.params,
        macro_frames,
        bursts,
        times: h.times,
    })
}

pub fn write_mstd(traj: &MultiScaleTrajectory, path: &Path) -> Result<()> {
    write_synced(path, &encode_mstd(traj)?)
}

pub fn read_mstd(path: &Path) -> Result<MultiScaleTrajectory> {
    let bytes = std::fs::read(path).map_err(|e| PimrlError::io(path, e))?;
    decode_mstd(&bytes, path)
}

/// Named 64-bit weights plus optimizer state and training bookkeeping.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: Vec<(String, Tensor)>,
    pub adam: Option<AdamState>,
    pub epoch: usize,
    pub config: serde_json::Value,
    pub best_val_loss: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct AdamHeader {
    t: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PmckHeader {
    manifest: Vec<ManifestEntry>,
    epoch: usize,
    config: serde_json::Value,
    best_val_loss: Option<f64>,
    adam: Option<AdamHeader>,
}

const ADAM_M: &str = "adam.m.";
const ADAM_V: &str = "adam.v.";

pub fn encode_checkpoint(ck: &Checkpoint) -> Result<Vec<u8>> {
    let mut manifest = Vec::new();
    let mut payload: Vec<u8> = Vec::new();
    let mut push = |name: String, shape: Vec<usize>, data: &[f64], manifest: &mut Vec<ManifestEntry>| {
        manifest.push(ManifestEntry {
            name,
            shape,
            offset: payload.len(),
        });
        for v in data {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    };
    for (name, t) in &ck.params {
        push(name.clone(), t.shape().to_vec(), t.data(), &mut manifest);
    }
    if let Some(adam) = &ck.adam {
        if adam.m.len() != ck.params.len() {
            return Err(PimrlError::InvalidArgument("optimizer state does not match parameter list".into()));
        }
        for (prefix, moments) in [(ADAM_M, &adam.m), (ADAM_V, &adam.v)] {
            for ((name, t), buf) in ck.params.iter().zip(moments) {
                push(format!("{prefix}{name}"), t.shape().to_vec(), buf, &mut manifest);
            }
        }
    }
    let header = PmckHeader {
        manifest,
        epoch: ck.epoch,
        config: ck.config.clone(),
        best_val_loss: ck.best_val_loss,
        adam: ck.adam.as_ref().map(|a| AdamHeader {
            t: a.t,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
        }),
    };
    let header = serde_json::to_vec(&header)?;
    Ok(framed(PMCK_MAGIC, &header, &payload))
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let (header, payload) = unframe(path, bytes, PMCK_MAGIC, "PMCK")?;
    let h: PmckHeader = serde_json::from_slice(header).map_err(|e| inconsistent(path, e.to_string()))?;
    let mut cursor = 0usize;
    let mut tensors = Vec::with_capacity(h.manifest.len());
    for e in &h.manifest {
        if e.offset != cursor {
            return Err(inconsistent(path, format!("entry `{}` at offset {}, expected {cursor}", e.name, e.offset)));
        }
        let n: usize = e.shape.iter().product();
        let end = cursor + 8 * n;
        if end > payload.len() {
            return Err(PimrlError::Truncated {
                path: path.to_path_buf(),
                expected: end,
                found: payload.len(),
            });
        }
        let data = payload[cursor..end]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        tensors.push((e.name.clone(), Tensor::new(e.shape.clone(), data)?));
        cursor = end;
    }
    if cursor != payload.len() {
        return Err(inconsistent(path, format!("manifest covers {cursor} of {} payload bytes", payload.len())));
    }
    let n_adam = tensors.iter().filter(|(n, _)| n.starts_with(ADAM_M) || n.starts_with(ADAM_V)).count();
    let n_params = tensors.len() - n_adam;
    let moments = tensors.split_off(n_params);
    let params = tensors;
    let adam = match h.adam {
        None if n_adam == 0 => None,
        Some(a) if n_adam == 2 * n_params => {
            let (m, v) = moments.split_at(n_params);
            for (i, (name, _)) in params.iter().enumerate() {
                if m[i].0 != format!("{ADAM_M}{name}") || v[i].0 != format!("{ADAM_V}{name}") {
                    return Err(inconsistent(path, format!("optimizer moments out of order at `{name}`")));
                }
            }
            Some(AdamState {
                m: m.iter().map(|(_, t)| t.data().to_vec()).collect(),
                v: v.iter().map(|(_, t)| t.data().to_vec()).collect(),
                t: a.t,
                beta1: a.beta1,
                beta2: a.beta2,
                eps: a.eps,
            })
        }
        _ => return Err(inconsistent(path, "optimizer header and moment entries disagree")),
    };
    Ok(Checkpoint {
        params,
        adam,
        epoch: h.epoch,
        config: h.config,
        best_val_loss: h.best_val_loss,
    })
}

pub fn write_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    write_synced(path, &encode_checkpoint(ck)?)
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| PimrlError::io(path, e))?;
    decode_checkpoint(&bytes, path)
}

/// Number of trajectories per partition.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit<T> {
    pub train: Vec<T>,
    pub val: Vec<T>,
    pub test: Vec<T>,
}

/// Partitions whole trajectories by ascending seed: the lowest seeds train,
/// then validation, then test. Leftover items are dropped.
pub fn split_dataset<T>(items: Vec<T>, seed_of: impl Fn(&T) -> u64, spec: SplitSpec) -> Result<DatasetSplit<T>> {
    let wanted = spec.train + spec.val + spec.test;
    if wanted > items.len() {
        return Err(PimrlError::InvalidArgument(format!(
            "split needs {wanted} trajectories ({} train, {} val, {} test) but only {} are available",
            spec.train,
            spec.val,
            spec.test,
            items.len()
        )));
    }
    let mut items = items;
    items.sort_by_key(|t| seed_of(t));
    if items.windows(2).any(|w| seed_of(&w[0]) == seed_of(&w[1])) {
        return Err(PimrlError::InvalidArgument("trajectories must have distinct seeds".into()));
    }
    let mut rest = items.into_iter();
    let train = rest.by_ref().take(spec.train).collect();
    let val = rest.by_ref().take(spec.val).collect();
    let test = rest.take(spec.test).collect();
    Ok(DatasetSplit { train, val, test })
}

/// Reads every `.mstd` file in `dir`, sorted by file name.
pub fn read_dir_mstd(dir: &Path) -> Result<Vec<(PathBuf, MultiScaleTrajectory)>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| PimrlError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "mstd"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let t = read_mstd(&p)?;
            Ok((p, t))
        })
        .collect()
}
