//! Coarse-step network: strided conv encoder, one ConvLSTM cell in the latent
//! space, upsampling conv decoder, and a residual connection back to the input.

use serde::{Deserialize, Serialize};

use crate::error::{PimrlError, Result};
use crate::rng::SplitMix64;
use crate::tensor::{ConvGeometry, Field, Graph, NodeId, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MacroConfig {
    /// Channels after the first stride-2 conv.
    pub hidden: usize,
    /// Latent (ConvLSTM) channels after the second stride-2 conv.
    pub latent: usize,
    /// Kernel extent of every conv (odd).
    pub kernel: usize,
}

impl Default for MacroConfig {
    fn default() -> Self {
        Self {
            hidden: 16,
            latent: 32,
            kernel: 3,
        }
    }
}

/// Recurrent state; `h` and `c` share the latent shape.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLstmState {
    pub h: Tensor,
    pub c: Tensor,
}

impl ConvLstmState {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            h: Tensor::zeros(shape),
            c: Tensor::zeros(shape),
        }
    }
}

/// Gate names in storage order.
pub const GATES: [&str; 8] = ["w_xi", "w_hi", "w_xf", "w_hf", "w_xc", "w_hc", "w_xo", "w_ho"];

#[derive(Clone, Debug, PartialEq)]
pub struct MacroNet {
    pub config: MacroConfig,
    pub n_fields: usize,
    pub dims: usize,
    pub enc1: (Tensor, Tensor),
    pub enc2: (Tensor, Tensor),
    /// Gate convolutions in [`GATES`] order, each `(kernel, bias)`.
    pub gates: Vec<(Tensor, Tensor)>,
    pub dec1: (Tensor, Tensor),
    pub dec2: (Tensor, Tensor),
}

#[derive(Clone, Debug)]
pub struct MacroNodes {
    pub enc1: (NodeId, NodeId),
    pub enc2: (NodeId, NodeId),
    pub gates: Vec<(NodeId, NodeId)>,
    pub dec1: (NodeId, NodeId),
    pub dec2: (NodeId, NodeId),
}

impl MacroNodes {
    /// Parameter nodes in [`MacroNet::params`] order.
    pub fn params(&self) -> Vec<NodeId> {
        let mut v = vec![self.enc1.0, self.enc1.1, self.enc2.0, self.enc2.1];
        for (k, b) in &self.gates {
            v.push(*k);
            v.push(*b);
        }
        v.extend([self.dec1.0, self.dec1.1, self.dec2.0, self.dec2.1]);
        v
    }
}

fn conv_params(co: usize, ci: usize, kernel: usize, dims: usize, std: f64, rng: &mut SplitMix64) -> (Tensor, Tensor) {
    let mut shape = vec![co, ci];
    shape.extend(std::iter::repeat_n(kernel, dims));
    (Tensor::from_fn(&shape, |_| std * rng.normal()), Tensor::zeros(&[co]))
}

impl MacroNet {
    /// Xavier-style init for the encoder, gates and first decoder conv; the
    /// output conv starts 100× smaller so the untrained step is close to the
    /// identity.
    pub fn new(n_fields: usize, dims: usize, config: MacroConfig, rng: &mut SplitMix64) -> Result<Self> {
        if config.kernel % 2 == 0 || config.hidden == 0 || config.latent == 0 {
            return Err(PimrlError::Config(format!("macro net: bad config {config:?}")));
        }
        if !(dims == 1 || dims == 2) || n_fields == 0 {
            return Err(PimrlError::Config(format!("macro net: dims {dims}, fields {n_fields}")));
        }
        let taps = config.kernel.pow(dims as u32);
        let std = |ci: usize| 1.0 / ((ci * taps) as f64).sqrt();
        let (k, hid, lat) = (config.kernel, config.hidden, config.latent);
        let enc1 = conv_params(hid, n_fields, k, dims, std(n_fields), rng);
        let enc2 = conv_params(lat, hid, k, dims, std(hid), rng);
        let mut gates: Vec<(Tensor, Tensor)> = GATES
            .iter()
            .map(|_| conv_params(lat, lat, k, dims, std(lat), rng))
            .collect();
        gates[2].1.data_mut().fill(1.0);
        let dec1 = conv_params(hid, lat, k, dims, std(lat), rng);
        let dec2 = conv_params(n_fields, hid, k, dims, 0.01 * std(hid), rng);
        Ok(Self {
            config,
            n_fields,
            dims,
            enc1,
            enc2,
            gates,
            dec1,
            dec2,
        })
    }

    /// Zeros the output conv: the step becomes the identity.
    pub fn zero_decoder(&mut self) {
        self.dec2.0.data_mut().fill(0.0);
        self.dec2.1.data_mut().fill(0.0);
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut v: Vec<String> = ["enc1.kernel", "enc1.bias", "enc2.kernel", "enc2.bias"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for g in GATES {
            v.push(format!("{g}.kernel"));
            v.push(format!("{g}.bias"));
        }
        v.extend(["dec1.kernel", "dec1.bias", "dec2.kernel", "dec2.bias"].iter().map(|s| s.to_string()));
        v
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut v = vec![&self.enc1.0, &self.enc1.1, &self.enc2.0, &self.enc2.1];
        for (k, b) in &self.gates {
            v.push(k);
            v.push(b);
        }
        v.extend([&self.dec1.0, &self.dec1.1, &self.dec2.0, &self.dec2.1]);
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = vec![&mut self.enc1.0, &mut self.enc1.1, &mut self.enc2.0, &mut self.enc2.1];
        for (k, b) in self.gates.iter_mut() {
            v.push(k);
            v.push(b);
        }
        v.extend([&mut self.dec1.0, &mut self.dec1.1, &mut self.dec2.0, &mut self.dec2.1]);
        v
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> MacroNodes {
        let mut pair = |p: &(Tensor, Tensor)| (g.leaf(p.0.clone(), trainable), g.leaf(p.1.clone(), trainable));
        MacroNodes {
            enc1: pair(&self.enc1),
            enc2: pair(&self.enc2),
            gates: self.gates.iter().map(&mut pair).collect(),
            dec1: pair(&self.dec1),
            dec2: pair(&self.dec2),
        }
    }

    /// Uses existing nodes (in [`MacroNet::params`] order) as the weights.
    pub fn bind_params(&self, g: &Graph, params: &[NodeId]) -> Result<MacroNodes> {
        let own = self.params();
        if params.len() != own.len() {
            return Err(PimrlError::InvalidArgument(format!("macro net takes {} parameter nodes, got {}", own.len(), params.len())));
        }
        for (id, t) in params.iter().zip(own) {
            if g.shape(*id) != t.shape() {
                return Err(PimrlError::ShapeMismatch {
                    op: "macro bind_params",
                    lhs: t.shape().to_vec(),
                    rhs: g.shape(*id).to_vec(),
                });
            }
        }
        let pair = |i: usize| (params[i], params[i + 1]);
        let ng = self.gates.len();
        Ok(MacroNodes {
            enc1: pair(0),
            enc2: pair(2),
            gates: (0..ng).map(|j| pair(4 + 2 * j)).collect(),
            dec1: pair(4 + 2 * ng),
            dec2: pair(6 + 2 * ng),
        })
    }

    /// Latent shape `[latent, n/4, ...]` for a field of spatial extent `spatial`.
    pub fn latent_shape(&self, spatial: &[usize]) -> Result<Vec<usize>> {
        if spatial.len() != self.dims || spatial.iter().any(|n| n % 4 != 0 || *n == 0) {
            return Err(PimrlError::InvalidArgument(format!(
                "macro net needs {}D extents divisible by 4, got {spatial:?}",
                self.dims
            )));
        }
        let mut s = vec![self.config.latent];
        s.extend(spatial.iter().map(|n| n / 4));
        Ok(s)
    }

    pub fn initial_state(&self, spatial: &[usize]) -> Result<ConvLstmState> {
        Ok(ConvLstmState::zeros(&self.latent_shape(spatial)?))
    }

    pub fn encode_node(&self, g: &mut Graph, w: &MacroNodes, u: NodeId) -> Result<NodeId> {
        let shape = g.shape(u).to_vec();
        if shape.first() != Some(&self.n_fields) {
            return Err(PimrlError::ShapeMismatch {
                op: "macro encode",
                lhs: vec![self.n_fields],
                rhs: shape,
            });
        }
        self.latent_shape(&shape[1..])?;
        let s2 = ConvGeometry::periodic_strided(2);
        let a = g.conv(u, w.enc1.0, Some(w.enc1.1), s2)?;
        let a = g.tanh(a);
        g.conv(a, w.enc2.0, Some(w.enc2.1), s2)
    }

    fn gate(&self, g: &mut Graph, w: &MacroNodes, idx: usize, x: NodeId, h: NodeId) -> Result<NodeId> {
        let p = ConvGeometry::PERIODIC;
        let (wx, bx) = w.gates[2 * idx];
        let (wh, bh) = w.gates[2 * idx + 1];
        let a = g.conv(x, wx, Some(bx), p)?;
        let b = g.conv(h, wh, Some(bh), p)?;
        g.add(a, b)
    }

    /// One ConvLSTM update, returning `(h', c')`.
    pub fn cell_node(&self, g: &mut Graph, w: &MacroNodes, x: NodeId, h: NodeId, c: NodeId) -> Result<(NodeId, NodeId)> {
        let pre_i = self.gate(g, w, 0, x, h)?;
        let pre_f = self.gate(g, w, 1, x, h)?;
        let pre_c = self.gate(g, w, 2, x, h)?;
        let pre_o = self.gate(g, w, 3, x, h)?;
        let i = g.sigmoid(pre_i);
        let f = g.sigmoid(pre_f);
        let cand = g.tanh(pre_c);
        let o = g.sigmoid(pre_o);
        let keep = g.mul(f, c)?;
        let write = g.mul(i, cand)?;
        let c_new = g.add(keep, write)?;
        let tc = g.tanh(c_new);
        let h_new = g.mul(o, tc)?;
        Ok((h_new, c_new))
    }

    pub fn decode_node(&self, g: &mut Graph, w: &MacroNodes, h: NodeId) -> Result<NodeId> {
        let p = ConvGeometry::PERIODIC;
        let a = g.upsample(h)?;
        let a = g.conv(a, w.dec1.0, Some(w.dec1.1), p)?;
        let a = g.tanh(a);
        let a = g.upsample(a)?;
        g.conv(a, w.dec2.0, Some(w.dec2.1), p)
    }

    /// `u + decode(h')` with `(h', c') = cell(encode(u), h, c)`.
    pub fn step_node(&self, g: &mut Graph, w: &MacroNodes, u: NodeId, h: NodeId, c: NodeId) -> Result<(NodeId, NodeId, NodeId)> {
        let x = self.encode_node(g, w, u)?;
        let (h2, c2) = self.cell_node(g, w, x, h, c)?;
        let d = self.decode_node(g, w, h2)?;
        let out = g.add(u, d)?;
        Ok((out, h2, c2))
    }

    pub fn encode(&self, u: &Field) -> Result<Tensor> {
        let mut g = Graph::leaves_only();
        let w = self.bind(&mut g, false);
        let x = g.constant(u.clone());
        let y = self.encode_node(&mut g, &w, x)?;
        Ok(g.value(y).clone())
    }

    pub fn convlstm_cell(&self, x: &Tensor, state: &ConvLstmState) -> Result<ConvLstmState> {
        if x.shape() != state.h.shape() || state.h.shape() != state.c.shape() {
            return Err(PimrlError::ShapeMismatch {
                op: "convlstm_cell",
                lhs: x.shape().to_vec(),
                rhs: state.h.shape().to_vec(),
            });
        }
        let mut g = Graph::leaves_only();
        let w = self.bind(&mut g, false);
        let xn = g.constant(x.clone());
        let h = g.constant(state.h.clone());
        let c = g.constant(state.c.clone());
        let (h2, c2) = self.cell_node(&mut g, &w, xn, h, c)?;
        Ok(ConvLstmState {
            h: g.value(h2).clone(),
            c: g.value(c2).clone(),
        })
    }

    /// One residual macro step.
    pub fn step(&self, u: &Field, state: &ConvLstmState) -> Result<(Field, ConvLstmState)> {
        let mut g = Graph::leaves_only();
        let w = self.bind(&mut g, false);
        let x = g.constant(u.clone());
        let expected = self.latent_shape(&u.shape()[1..])?;
        if state.h.shape() != expected.as_slice() || state.c.shape() != expected.as_slice() {
            return Err(PimrlError::ShapeMismatch {
                op: "macro_step state",
                lhs: expected,
                rhs: state.h.shape().to_vec(),
            });
        }
        let h = g.constant(state.h.clone());
        let c = g.constant(state.c.clone());
        let (out, h2, c2) = self.step_node(&mut g, &w, x, h, c)?;
        let out = g.value(out).clone();
        if !out.is_finite() {
            return Err(PimrlError::Divergence {
                phase: "macro step",
                step: 1,
            });
        }
        Ok((
            out,
            ConvLstmState {
                h: g.value(h2).clone(),
                c: g.value(c2).clone(),
            },
        ))
    }
}
