//! Cross-correlation kernels (no kernel flip) for 1D and 2D channel-first data.
//!
//! 1D inputs are handled as 2D inputs of height 1, so a single pair of
//! forward/backward loops serves both. Periodic padding wraps `(k - 1) / 2`
//! cells per side; `Padding::None` is a valid correlation that shrinks the
//! output.

use super::Tensor;
use crate::error::{PimrlError, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    Periodic,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    pub padding: Padding,
}

impl ConvGeometry {
    pub const PERIODIC: ConvGeometry = ConvGeometry {
        stride: 1,
        padding: Padding::Periodic,
    };
    pub const VALID: ConvGeometry = ConvGeometry {
        stride: 1,
        padding: Padding::None,
    };

    pub fn periodic_strided(stride: usize) -> Self {
        ConvGeometry {
            stride,
            padding: Padding::Periodic,
        }
    }
}

/// Normalized 2D problem description.
#[derive(Clone, Copy, Debug)]
struct Plan {
    ci: usize,
    co: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    ph: usize,
    pw: usize,
    hp: usize,
    wp: usize,
    ho: usize,
    wo: usize,
    stride_h: usize,
    stride_w: usize,
}

fn mismatch(input: &[usize], kernel: &[usize]) -> PimrlError {
    PimrlError::ShapeMismatch {
        op: "conv",
        lhs: input.to_vec(),
        rhs: kernel.to_vec(),
    }
}

fn plan(input: &[usize], kernel: &[usize], geom: ConvGeometry) -> Result<Plan> {
    let dims = input.len().saturating_sub(1);
    if !(dims == 1 || dims == 2) || kernel.len() != dims + 2 || kernel[1] != input[0] {
        return Err(mismatch(input, kernel));
    }
    if geom.stride == 0 {
        return Err(PimrlError::InvalidArgument("conv stride must be >= 1".into()));
    }
    let (h, w, kh, kw) = if dims == 1 {
        (1, input[1], 1, kernel[2])
    } else {
        (input[1], input[2], kernel[2], kernel[3])
    };
    let periodic = geom.padding == Padding::Periodic;
    let (ph, pw) = if periodic {
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(PimrlError::InvalidArgument(format!(
                "periodic conv needs odd kernel extents, got {kernel:?}"
            )));
        }
        ((kh - 1) / 2, (kw - 1) / 2)
    } else {
        (0, 0)
    };
    if (dims == 2 && ph > h) || pw > w {
        return Err(mismatch(input, kernel));
    }
    let hp = h + 2 * ph;
    let wp = w + 2 * pw;
    if kh > hp || kw > wp {
        return Err(mismatch(input, kernel));
    }
    let stride_h = if dims == 1 { 1 } else { geom.stride };
    let stride_w = geom.stride;
    Ok(Plan {
        ci: input[0],
        co: kernel[0],
        h,
        w,
        kh,
        kw,
        ph,
        pw,
        hp,
        wp,
        ho: (hp - kh) / stride_h + 1,
        wo: (wp - kw) / stride_w + 1,
        stride_h,
        stride_w,
    })
}

/// Output shape of a convolution, or a shape error.
pub fn conv_output_shape(input: &[usize], kernel: &[usize], geom: ConvGeometry) -> Result<Vec<usize>> {
    let p = plan(input, kernel, geom)?;
    Ok(if input.len() == 2 {
        vec![p.co, p.wo]
    } else {
        vec![p.co, p.ho, p.wo]
    })
}

fn pad(x: &[f64], p: &Plan) -> Vec<f64> {
    if p.ph == 0 && p.pw == 0 {
        return x.to_vec();
    }
    let mut out = vec![0.0; p.ci * p.hp * p.wp];
    for c in 0..p.ci {
        let src = &x[c * p.h * p.w..(c + 1) * p.h * p.w];
        let dst = &mut out[c * p.hp * p.wp..(c + 1) * p.hp * p.wp];
        for yp in 0..p.hp {
            let y = (yp + p.h - p.ph % p.h) % p.h;
            let row = &src[y * p.w..(y + 1) * p.w];
            let drow = &mut dst[yp * p.wp..(yp + 1) * p.wp];
            for (xp, d) in drow.iter_mut().enumerate() {
                *d = row[(xp + p.w - p.pw % p.w) % p.w];
            }
        }
    }
    out
}

/// Folds a gradient w.r.t. the padded input back onto the interior.
fn unpad_accumulate(gpad: &[f64], p: &Plan) -> Vec<f64> {
    if p.ph == 0 && p.pw == 0 {
        return gpad.to_vec();
    }
    let mut out = vec![0.0; p.ci * p.h * p.w];
    for c in 0..p.ci {
        let src = &gpad[c * p.hp * p.wp..(c + 1) * p.hp * p.wp];
        let dst = &mut out[c * p.h * p.w..(c + 1) * p.h * p.w];
        for yp in 0..p.hp {
            let y = (yp + p.h - p.ph % p.h) % p.h;
            for xp in 0..p.wp {
                let xx = (xp + p.w - p.pw % p.w) % p.w;
                dst[y * p.w + xx] += src[yp * p.wp + xp];
            }
        }
    }
    out
}

/// Forward cross-correlation. `bias`, when given, has shape `[c_out]`.
pub fn conv_forward(
    input: &Tensor,
    kernel: &Tensor,
    bias: Option<&Tensor>,
    geom: ConvGeometry,
) -> Result<Tensor> {
    let out_shape = conv_output_shape(input.shape(), kernel.shape(), geom)?;
    let p = plan(input.shape(), kernel.shape(), geom)?;
    if let Some(b) = bias {
        if b.shape() != [p.co] {
            return Err(PimrlError::ShapeMismatch {
                op: "conv bias",
                lhs: vec![p.co],
                rhs: b.shape().to_vec(),
            });
        }
    }
    let padded = pad(input.data(), &p);
    let k = kernel.data();
    let plane = p.ho * p.wo;
    let mut out = vec![0.0; p.co * plane];
    for o in 0..p.co {
        let ob = &mut out[o * plane..(o + 1) * plane];
        if let Some(b) = bias {
            ob.fill(b.data()[o]);
        }
        for c in 0..p.ci {
            let xb = &padded[c * p.hp * p.wp..(c + 1) * p.hp * p.wp];
            for dy in 0..p.kh {
                for dx in 0..p.kw {
                    let wv = k[((o * p.ci + c) * p.kh + dy) * p.kw + dx];
                    if wv == 0.0 {
                        continue;
                    }
                    for oy in 0..p.ho {
                        let start = (oy * p.stride_h + dy) * p.wp + dx;
                        let orow = &mut ob[oy * p.wo..(oy + 1) * p.wo];
                        if p.stride_w == 1 {
                            let xrow = &xb[start..start + p.wo];
                            for (acc, xv) in orow.iter_mut().zip(xrow) {
                                *acc += wv * xv;
                            }
                        } else {
                            for (ox, acc) in orow.iter_mut().enumerate() {
                                *acc += wv * xb[start + ox * p.stride_w];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(out_shape, out)
}

/// Gradients of a convolution w.r.t. input, kernel and bias.
pub struct ConvGrads {
    pub input: Option<Vec<f64>>,
    pub kernel: Option<Vec<f64>>,
    pub bias: Vec<f64>,
}

pub fn conv_backward(
    input: &Tensor,
    kernel: &Tensor,
    geom: ConvGeometry,
    grad_out: &[f64],
    need_input: bool,
    need_kernel: bool,
) -> Result<ConvGrads> {
    let p = plan(input.shape(), kernel.shape(), geom)?;
    let plane = p.ho * p.wo;
    debug_assert_eq!(grad_out.len(), p.co * plane);
    let padded = if need_kernel {
        pad(input.data(), &p)
    } else {
        Vec::new()
    };
    let k = kernel.data();
    let mut gpad = if need_input {
        vec![0.0; p.ci * p.hp * p.wp]
    } else {
        Vec::new()
    };
    let mut gk = if need_kernel {
        vec![0.0; k.len()]
    } else {
        Vec::new()
    };
    let mut gb = vec![0.0; p.co];
    for o in 0..p.co {
        let gob = &grad_out[o * plane..(o + 1) * plane];
        gb[o] = gob.iter().sum();
        for c in 0..p.ci {
            let base = c * p.hp * p.wp;
            for dy in 0..p.kh {
                for dx in 0..p.kw {
                    let kidx = ((o * p.ci + c) * p.kh + dy) * p.kw + dx;
                    let wv = k[kidx];
                    let mut acc = 0.0;
                    for oy in 0..p.ho {
                        let start = base + (oy * p.stride_h + dy) * p.wp + dx;
                        let grow = &gob[oy * p.wo..(oy + 1) * p.wo];
                        if p.stride_w == 1 {
                            if need_kernel {
                                let xrow = &padded[start..start + p.wo];
                                acc += grow.iter().zip(xrow).map(|(g, x)| g * x).sum::<f64>();
                            }
                            if need_input && wv != 0.0 {
                                let grow_pad = &mut gpad[start..start + p.wo];
                                for (gp, g) in grow_pad.iter_mut().zip(grow) {
                                    *gp += wv * g;
                                }
                            }
                        } else {
                            for (ox, g) in grow.iter().enumerate() {
                                let idx = start + ox * p.stride_w;
                                if need_kernel {
                                    acc += g * padded[idx];
                                }
                                if need_input {
                                    gpad[idx] += wv * g;
                                }
                            }
                        }
                    }
                    if need_kernel {
                        gk[kidx] += acc;
                    }
                }
            }
        }
    }
    Ok(ConvGrads {
        input: need_input.then(|| unpad_accumulate(&gpad, &p)),
        kernel: need_kernel.then_some(gk),
        bias: gb,
    })
}
