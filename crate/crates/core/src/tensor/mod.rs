//! Dense tensors and a small define-by-run reverse-mode autodiff engine.
//!
//! The op set is exactly what the micro and macro networks need: elementwise
//! arithmetic, periodic/valid convolution, 1×1 channel mixing, nearest
//! upsampling, `tanh`/`sigmoid` and the scalar reductions used by the loss.
//! Layout is always channels-first, C-order: `[channels, spatial...]`.

mod conv;
mod gradcheck;
mod graph;
mod optim;

pub use conv::{conv_backward, conv_forward, conv_output_shape, ConvGeometry, ConvGrads, Padding};
pub use gradcheck::{gradcheck, GradCheck};
pub use graph::{Graph, NodeId, OpAttrs, OpKind};
pub use optim::{clip_global_norm, AdamState, LrSchedule};

use crate::error::{PimrlError, Result};
use serde::{Deserialize, Serialize};

/// A dense 64-bit tensor with a channels-first shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// A multi-channel state on a uniform periodic grid: `[n_fields, spatial...]`.
pub type Field = Tensor;

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(PimrlError::InvalidArgument(format!(
                "tensor shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Leading (channel) extent; 1 for scalars.
    pub fn channels(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Extents after the channel axis.
    pub fn spatial(&self) -> &[usize] {
        if self.shape.is_empty() {
            &[]
        } else {
            &self.shape[1..]
        }
    }

    /// Number of elements per channel.
    pub fn plane_len(&self) -> usize {
        self.spatial().iter().product()
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Circular shift along one spatial axis (axis 0 is the first spatial dim).
    pub fn roll(&self, axis: usize, shift: isize) -> Tensor {
        let spatial = self.spatial().to_vec();
        assert!(axis < spatial.len());
        let n_axis = spatial[axis] as isize;
        let inner: usize = spatial[axis + 1..].iter().product();
        let outer: usize = self.channels() * spatial[..axis].iter().product::<usize>();
        let mut out = vec![0.0; self.data.len()];
        for o in 0..outer {
            for i in 0..n_axis {
                let j = (i + shift).rem_euclid(n_axis);
                let src = (o * n_axis as usize + i as usize) * inner;
                let dst = (o * n_axis as usize + j as usize) * inner;
                out[dst..dst + inner].copy_from_slice(&self.data[src..src + inner]);
            }
        }
        Tensor {
            shape: self.shape.clone(),
            data: out,
        }
    }
}
