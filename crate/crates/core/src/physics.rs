//! Finite-difference stencils and periodic halo padding.
//!
//! These are shared by the reference solvers and by the micro network's fixed
//! convolution for known PDE terms, so both see the same discretization.

use serde::{Deserialize, Serialize};

use crate::error::{PimrlError, Result};
use crate::tensor::{conv_forward, ConvGeometry, Field, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivativeKind {
    Laplacian,
    D3x,
}

/// An odd-extent correlation kernel for one derivative on a uniform grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Stencil {
    coefficients: Vec<f64>,
    extent: Vec<usize>,
    spacing: f64,
    kind: DerivativeKind,
}

impl Stencil {
    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn extent(&self) -> &[usize] {
        &self.extent
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn kind(&self) -> DerivativeKind {
        self.kind
    }

    pub fn dims(&self) -> usize {
        self.extent.len()
    }

    /// Halo width needed on each side; follows from the kernel extent.
    pub fn halo(&self) -> usize {
        self.extent.iter().map(|e| e / 2).max().unwrap_or(0)
    }

    /// Channel-diagonal conv kernel `[C, C, extent...]` applying
    /// `scales[c] * stencil` to channel `c`.
    pub fn to_conv_kernel(&self, scales: &[f64]) -> Tensor {
        let c = scales.len();
        let taps = self.coefficients.len();
        let mut shape = vec![c, c];
        shape.extend(&self.extent);
        let mut data = vec![0.0; c * c * taps];
        for (ch, s) in scales.iter().enumerate() {
            let base = (ch * c + ch) * taps;
            for (k, coef) in self.coefficients.iter().enumerate() {
                data[base + k] = s * coef;
            }
        }
        Tensor::new(shape, data).expect("kernel shape")
    }
}

/// Second-difference Laplacian: `[1, -2, 1] / h²` in 1D, the 5-point
/// stencil in 2D.
pub fn laplacian_stencil(h: f64, dims: usize) -> Result<Stencil> {
    check_spacing(h)?;
    let s = 1.0 / (h * h);
    let (coefficients, extent) = match dims {
        1 => (vec![s, -2.0 * s, s], vec![3]),
        2 => (
            vec![0.0, s, 0.0, s, -4.0 * s, s, 0.0, s, 0.0],
            vec![3, 3],
        ),
        _ => {
            return Err(PimrlError::InvalidArgument(format!(
                "laplacian stencil supports 1 or 2 dims, got {dims}"
            )))
        }
    };
    Ok(Stencil {
        coefficients,
        extent,
        spacing: h,
        kind: DerivativeKind::Laplacian,
    })
}

/// Central third derivative `(-f[i-2] + 2 f[i-1] - 2 f[i+1] + f[i+2]) / (2h³)`.
pub fn d3x_stencil(h: f64) -> Result<Stencil> {
    check_spacing(h)?;
    let s = 1.0 / (2.0 * h * h * h);
    Ok(Stencil {
        coefficients: vec![-s, 2.0 * s, 0.0, -2.0 * s, s],
        extent: vec![5],
        spacing: h,
        kind: DerivativeKind::D3x,
    })
}

fn check_spacing(h: f64) -> Result<()> {
    if h > 0.0 && h.is_finite() {
        Ok(())
    } else {
        Err(PimrlError::InvalidArgument(format!("grid spacing must be positive, got {h}")))
    }
}

/// A field with periodic halo cells around its interior.
#[derive(Clone, Debug, PartialEq)]
pub struct PaddedField {
    padded: Tensor,
    halo: usize,
}

impl PaddedField {
    pub fn padded(&self) -> &Tensor {
        &self.padded
    }

    pub fn halo(&self) -> usize {
        self.halo
    }

    /// Drops the halo, recovering the interior exactly.
    pub fn crop(&self) -> Field {
        let h = self.halo;
        let c = self.padded.channels();
        let sp = self.padded.spatial();
        match sp.len() {
            1 => {
                let wp = sp[0];
                let w = wp - 2 * h;
                let mut out = Vec::with_capacity(c * w);
                for ch in 0..c {
                    out.extend_from_slice(&self.padded.channel(ch)[h..h + w]);
                }
                Tensor::new(vec![c, w], out).expect("crop shape")
            }
            _ => {
                let (hp, wp) = (sp[0], sp[1]);
                let (hh, w) = (hp - 2 * h, wp - 2 * h);
                let mut out = Vec::with_capacity(c * hh * w);
                for ch in 0..c {
                    let src = self.padded.channel(ch);
                    for y in h..h + hh {
                        out.extend_from_slice(&src[y * wp + h..y * wp + h + w]);
                    }
                }
                Tensor::new(vec![c, hh, w], out).expect("crop shape")
            }
        }
    }
}

/// Surrounds every channel with `halo` wrapped cells per side.
pub fn pad_periodic(field: &Field, halo: usize) -> Result<PaddedField> {
    let sp = field.spatial();
    if halo == 0 {
        return Err(PimrlError::InvalidArgument("halo must be >= 1".into()));
    }
    if sp.is_empty() || sp.len() > 2 {
        return Err(PimrlError::InvalidArgument(format!(
            "periodic padding needs 1 or 2 spatial dims, got shape {:?}",
            field.shape()
        )));
    }
    let smallest = *sp.iter().min().expect("non-empty");
    if halo > smallest {
        return Err(PimrlError::InvalidArgument(format!(
            "halo {halo} exceeds grid extent {smallest}"
        )));
    }
    let c = field.channels();
    let padded = if sp.len() == 1 {
        let w = sp[0];
        let wp = w + 2 * halo;
        let mut out = Vec::with_capacity(c * wp);
        for ch in 0..c {
            let row = field.channel(ch);
            out.extend((0..wp).map(|i| row[(i + w - halo) % w]));
        }
        Tensor::new(vec![c, wp], out)?
    } else {
        let (h, w) = (sp[0], sp[1]);
        let (hp, wp) = (h + 2 * halo, w + 2 * halo);
        let mut out = Vec::with_capacity(c * hp * wp);
        for ch in 0..c {
            let src = field.channel(ch);
            for yp in 0..hp {
                let y = (yp + h - halo) % h;
                out.extend((0..wp).map(|xp| src[y * w + (xp + w - halo) % w]));
            }
        }
        Tensor::new(vec![c, hp, wp], out)?
    };
    Ok(PaddedField { padded, halo })
}

/// `out[x] += coef * src[(x + shift) mod n]` over a periodic row.
#[inline]
fn axpy_shifted(out: &mut [f64], src: &[f64], shift: usize, coef: f64) {
    let n = src.len();
    let split = n - shift;
    for (o, s) in out[..split].iter_mut().zip(&src[shift..]) {
        *o += coef * s;
    }
    for (o, s) in out[split..].iter_mut().zip(&src[..shift]) {
        *o += coef * s;
    }
}

fn check_dims(field: &Field, s: &Stencil) -> Result<()> {
    if field.spatial().len() != s.dims() {
        return Err(PimrlError::ShapeMismatch {
            op: "apply_stencil",
            lhs: field.shape().to_vec(),
            rhs: s.extent().to_vec(),
        });
    }
    if field.spatial().iter().any(|n| *n < s.halo()) {
        return Err(PimrlError::InvalidArgument(format!(
            "grid {:?} smaller than stencil halo {}",
            field.spatial(),
            s.halo()
        )));
    }
    Ok(())
}

/// Periodic cross-correlation of every channel with `s`, by index wrapping.
pub fn apply_stencil(field: &Field, s: &Stencil) -> Result<Field> {
    check_dims(field, s)?;
    let mut out = Tensor::zeros(field.shape());
    for ch in 0..field.channels() {
        apply_stencil_channel(field.channel(ch), field.spatial(), s, out.channel_mut(ch));
    }
    Ok(out)
}

/// Accumulates `s` applied to one periodic channel into `out`.
pub(crate) fn apply_stencil_channel(src: &[f64], spatial: &[usize], s: &Stencil, out: &mut [f64]) {
    match spatial.len() {
        1 => {
            let n = spatial[0];
            let r = s.extent[0] / 2;
            for (j, coef) in s.coefficients.iter().enumerate() {
                if *coef == 0.0 {
                    continue;
                }
                let shift = (j + n - r % n) % n;
                axpy_shifted(out, src, shift, *coef);
            }
        }
        _ => {
            let (h, w) = (spatial[0], spatial[1]);
            let (eh, ew) = (s.extent[0], s.extent[1]);
            let (rh, rw) = (eh / 2, ew / 2);
            for a in 0..eh {
                for b in 0..ew {
                    let coef = s.coefficients[a * ew + b];
                    if coef == 0.0 {
                        continue;
                    }
                    let shift_x = (b + w - rw % w) % w;
                    for y in 0..h {
                        let sy = (y + a + h - rh % h) % h;
                        axpy_shifted(&mut out[y * w..(y + 1) * w], &src[sy * w..(sy + 1) * w], shift_x, coef);
                    }
                }
            }
        }
    }
}

/// Same result as [`apply_stencil`], computed as pad-then-valid-convolution
/// with the tensor engine.
pub fn apply_stencil_padded(field: &Field, s: &Stencil) -> Result<Field> {
    check_dims(field, s)?;
    let padded = pad_periodic(field, s.halo())?;
    let mut kshape = vec![1, 1];
    kshape.extend(s.extent());
    let kernel = Tensor::new(kshape, s.coefficients().to_vec())?;
    let mut out = Vec::with_capacity(field.len());
    let p = padded.padded();
    for ch in 0..p.channels() {
        let mut shape = vec![1];
        shape.extend(p.spatial());
        let single = Tensor::new(shape, p.channel(ch).to_vec())?;
        let y = conv_forward(&single, &kernel, None, ConvGeometry::VALID)?;
        out.extend_from_slice(y.data());
    }
    Tensor::new(field.shape().to_vec(), out)
}
