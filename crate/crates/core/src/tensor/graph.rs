use std::str::FromStr;

use super::conv::{conv_backward, conv_forward, ConvGeometry};
use super::Tensor;
use crate::error::{PimrlError, Result};

/// Handle to a node of a [`Graph`]. Ids increase strictly in creation order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// The closed set of differentiable operations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Add,
    Sub,
    Mul,
    ScalarMul,
    Conv,
    Conv1x1,
    Tanh,
    Sigmoid,
    Sum,
    Mean,
    Mse,
    Upsample,
}

impl FromStr for OpKind {
    type Err = PimrlError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "add" => OpKind::Add,
            "sub" => OpKind::Sub,
            "mul" | "elementwise_mul" => OpKind::Mul,
            "scalar_mul" => OpKind::ScalarMul,
            "conv" => OpKind::Conv,
            "conv_1x1" => OpKind::Conv1x1,
            "tanh" => OpKind::Tanh,
            "sigmoid" => OpKind::Sigmoid,
            "sum" => OpKind::Sum,
            "mean" => OpKind::Mean,
            "mse" => OpKind::Mse,
            "upsample" => OpKind::Upsample,
            other => return Err(PimrlError::UnknownOp(other.to_string())),
        })
    }
}

/// Non-tensor attributes for [`Graph::apply`].
#[derive(Clone, Copy, Debug, Default)]
pub struct OpAttrs {
    pub scalar: Option<f64>,
    pub geometry: Option<ConvGeometry>,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Conv {
        input: NodeId,
        kernel: NodeId,
        bias: Option<NodeId>,
        geom: ConvGeometry,
    },
    Conv1x1 {
        input: NodeId,
        weight: NodeId,
        bias: Option<NodeId>,
    },
    Tanh(NodeId),
    Sigmoid(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    Mse(NodeId, NodeId),
    Upsample(NodeId),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    op: Op,
    requires_grad: bool,
}

/// Define-by-run computation graph. Build it during a forward pass, call
/// [`Graph::backward`] on a scalar, read gradients with [`Graph::grad`].
///
/// Gradients accumulate across repeated `backward` calls until
/// [`Graph::zero_grad`] is called.
#[derive(Debug)]
pub struct Graph {
    nodes: Vec<Node>,
    retain_grads: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            retain_grads: true,
        }
    }

    /// A graph that only keeps gradients of leaves after `backward`.
    pub fn leaves_only() -> Self {
        Self {
            nodes: Vec::new(),
            retain_grads: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> NodeId {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.leaf(value, true)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.nodes[id.0].grad.as_deref()
    }

    /// Gradient as a tensor shaped like the node, zeros when none reached it.
    pub fn grad_tensor(&self, id: NodeId) -> Tensor {
        let shape = self.shape(id).to_vec();
        match self.grad(id) {
            Some(g) => Tensor::new(shape, g.to_vec()).expect("grad shape"),
            None => Tensor::zeros(&shape),
        }
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            requires_grad,
        });
        id
    }

    fn rg(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(PimrlError::ShapeMismatch {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok(())
    }

    fn zip_with(&self, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::new(va.shape().to_vec(), data).expect("same shape")
    }

    fn map(&self, a: NodeId, f: impl Fn(f64) -> f64) -> Tensor {
        let va = self.value(a);
        Tensor::new(va.shape().to_vec(), va.data().iter().map(|x| f(*x)).collect()).expect("same shape")
    }

    /// Generic dispatch by op kind; the typed methods below are the usual entry points.
    pub fn apply(&mut self, kind: OpKind, inputs: &[NodeId], attrs: &OpAttrs) -> Result<NodeId> {
        let arity = match kind {
            OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::Mse => 2,
            OpKind::Conv | OpKind::Conv1x1 => {
                if inputs.len() == 3 {
                    3
                } else {
                    2
                }
            }
            _ => 1,
        };
        if inputs.len() != arity {
            return Err(PimrlError::InvalidArgument(format!(
                "{kind:?} expects {arity} inputs, got {}",
                inputs.len()
            )));
        }
        match kind {
            OpKind::Add => self.add(inputs[0], inputs[1]),
            OpKind::Sub => self.sub(inputs[0], inputs[1]),
            OpKind::Mul => self.mul(inputs[0], inputs[1]),
            OpKind::Mse => self.mse(inputs[0], inputs[1]),
            OpKind::ScalarMul => {
                let s = attrs
                    .scalar
                    .ok_or_else(|| PimrlError::InvalidArgument("scalar_mul needs a scalar".into()))?;
                Ok(self.scale(inputs[0], s))
            }
            OpKind::Conv => {
                let geom = attrs.geometry.unwrap_or(ConvGeometry::PERIODIC);
                self.conv(inputs[0], inputs[1], inputs.get(2).copied(), geom)
            }
            OpKind::Conv1x1 => self.conv1x1(inputs[0], inputs[1], inputs.get(2).copied()),
            OpKind::Tanh => Ok(self.tanh(inputs[0])),
            OpKind::Sigmoid => Ok(self.sigmoid(inputs[0])),
            OpKind::Sum => Ok(self.sum(inputs[0])),
            OpKind::Mean => Ok(self.mean(inputs[0])),
            OpKind::Upsample => self.upsample(inputs[0]),
        }
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("add", a, b)?;
        let v = self.zip_with(a, b, |x, y| x + y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("sub", a, b)?;
        let v = self.zip_with(a, b, |x, y| x - y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("elementwise_mul", a, b)?;
        let v = self.zip_with(a, b, |x, y| x * y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let v = self.map(a, |x| s * x);
        let rg = self.rg(&[a]);
        self.push(v, Op::Scale(a, s), rg)
    }

    pub fn conv(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        bias: Option<NodeId>,
        geom: ConvGeometry,
    ) -> Result<NodeId> {
        let v = conv_forward(self.value(input), self.value(kernel), bias.map(|b| self.value(b)), geom)?;
        let mut deps = vec![input, kernel];
        deps.extend(bias);
        let rg = self.rg(&deps);
        Ok(self.push(
            v,
            Op::Conv {
                input,
                kernel,
                bias,
                geom,
            },
            rg,
        ))
    }

    /// Channel mixing: `weight` is `[c_out, c_in]`, `bias` is `[c_out]`.
    pub fn conv1x1(&mut self, input: NodeId, weight: NodeId, bias: Option<NodeId>) -> Result<NodeId> {
        let x = self.value(input);
        let w = self.value(weight);
        if x.shape().len() < 2 || w.shape().len() != 2 || w.shape()[1] != x.channels() {
            return Err(PimrlError::ShapeMismatch {
                op: "conv_1x1",
                lhs: x.shape().to_vec(),
                rhs: w.shape().to_vec(),
            });
        }
        let (co, ci, plane) = (w.shape()[0], w.shape()[1], x.plane_len());
        if let Some(b) = bias {
            if self.shape(b) != [co] {
                return Err(PimrlError::ShapeMismatch {
                    op: "conv_1x1 bias",
                    lhs: vec![co],
                    rhs: self.shape(b).to_vec(),
                });
            }
        }
        let mut out = vec![0.0; co * plane];
        for o in 0..co {
            let orow = &mut out[o * plane..(o + 1) * plane];
            if let Some(b) = bias {
                orow.fill(self.value(b).data()[o]);
            }
            for c in 0..ci {
                let wv = w.data()[o * ci + c];
                if wv == 0.0 {
                    continue;
                }
                for (acc, xv) in orow.iter_mut().zip(x.channel(c)) {
                    *acc += wv * xv;
                }
            }
        }
        let mut shape = x.shape().to_vec();
        shape[0] = co;
        let v = Tensor::new(shape, out)?;
        let mut deps = vec![input, weight];
        deps.extend(bias);
        let rg = self.rg(&deps);
        Ok(self.push(v, Op::Conv1x1 { input, weight, bias }, rg))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.map(a, f64::tanh);
        let rg = self.rg(&[a]);
        self.push(v, Op::Tanh(a), rg)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.map(a, |x| 1.0 / (1.0 + (-x).exp()));
        let rg = self.rg(&[a]);
        self.push(v, Op::Sigmoid(a), rg)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a);
        let m = v.data().iter().sum::<f64>() / v.len() as f64;
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(m), Op::Mean(a), rg)
    }

    /// Mean of squared differences over all elements.
    pub fn mse(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId> {
        self.same_shape("mse", pred, target)?;
        let (p, t) = (self.value(pred), self.value(target));
        let m = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / p.len() as f64;
        let rg = self.rg(&[pred, target]);
        Ok(self.push(Tensor::scalar(m), Op::Mse(pred, target), rg))
    }

    /// Nearest-neighbour ×2 upsampling along every spatial axis.
    pub fn upsample(&mut self, a: NodeId) -> Result<NodeId> {
        let x = self.value(a);
        let sp = x.spatial().to_vec();
        let c = x.channels();
        let v = match sp.len() {
            1 => {
                let w = sp[0];
                let mut out = vec![0.0; c * 2 * w];
                for ch in 0..c {
                    let src = x.channel(ch);
                    for (i, v) in src.iter().enumerate() {
                        out[ch * 2 * w + 2 * i] = *v;
                        out[ch * 2 * w + 2 * i + 1] = *v;
                    }
                }
                Tensor::new(vec![c, 2 * w], out)?
            }
            2 => {
                let (h, w) = (sp[0], sp[1]);
                let mut out = vec![0.0; c * 4 * h * w];
                for ch in 0..c {
                    let src = x.channel(ch);
                    let dst = &mut out[ch * 4 * h * w..(ch + 1) * 4 * h * w];
                    for y in 0..2 * h {
                        for xx in 0..2 * w {
                            dst[y * 2 * w + xx] = src[(y / 2) * w + xx / 2];
                        }
                    }
                }
                Tensor::new(vec![c, 2 * h, 2 * w], out)?
            }
            _ => {
                return Err(PimrlError::ShapeMismatch {
                    op: "upsample",
                    lhs: x.shape().to_vec(),
                    rhs: vec![],
                })
            }
        };
        let rg = self.rg(&[a]);
        Ok(self.push(v, Op::Upsample(a), rg))
    }

    /// Reverse-mode pass from a scalar root, accumulating into every
    /// reachable node that requires a gradient.
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        let root_shape = self.shape(root).to_vec();
        if self.value(root).len() != 1 {
            return Err(PimrlError::NonScalarRoot(root_shape));
        }
        if !self.nodes[root.0].requires_grad {
            return Ok(());
        }
        let mut pending: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        pending[root.0] = Some(vec![1.0]);
        for idx in (0..=root.0).rev() {
            let Some(g) = pending[idx].take() else {
                continue;
            };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            self.propagate(idx, &g, &mut pending)?;
            let node = &mut self.nodes[idx];
            if self.retain_grads || matches!(node.op, Op::Leaf) {
                match &mut node.grad {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => node.grad = Some(g),
                }
            }
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &[f64], pending: &mut [Option<Vec<f64>>]) -> Result<()> {
        let nodes = &self.nodes;
        let wants = |id: NodeId| nodes[id.0].requires_grad;
        let mut send = |id: NodeId, contrib: Vec<f64>| {
            let slot = &mut pending[id.0];
            match slot {
                Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, b)| *a += b),
                None => *slot = Some(contrib),
            }
        };
        match &nodes[idx].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if wants(*a) {
                    send(*a, g.to_vec());
                }
                if wants(*b) {
                    send(*b, g.to_vec());
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    send(*a, g.to_vec());
                }
                if wants(*b) {
                    send(*b, g.iter().map(|x| -x).collect());
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                if wants(*a) {
                    send(*a, g.iter().zip(vb).map(|(g, y)| g * y).collect());
                }
                if wants(*b) {
                    send(*b, g.iter().zip(va).map(|(g, x)| g * x).collect());
                }
            }
            Op::Scale(a, s) => {
                if wants(*a) {
                    send(*a, g.iter().map(|x| s * x).collect());
                }
            }
            Op::Conv {
                input,
                kernel,
                bias,
                geom,
            } => {
                let grads = conv_backward(
                    &nodes[input.0].value,
                    &nodes[kernel.0].value,
                    *geom,
                    g,
                    wants(*input),
                    wants(*kernel),
                )?;
                if let Some(gi) = grads.input {
                    send(*input, gi);
                }
                if let Some(gk) = grads.kernel {
                    send(*kernel, gk);
                }
                if let Some(b) = bias {
                    if wants(*b) {
                        send(*b, grads.bias);
                    }
                }
            }
            Op::Conv1x1 {
                input,
                weight,
                bias,
            } => {
                let x = &nodes[input.0].value;
                let w = &nodes[weight.0].value;
                let (co, ci, plane) = (w.shape()[0], w.shape()[1], x.plane_len());
                if wants(*input) {
                    let mut gi = vec![0.0; ci * plane];
                    for o in 0..co {
                        let go = &g[o * plane..(o + 1) * plane];
                        for c in 0..ci {
                            let wv = w.data()[o * ci + c];
                            for (acc, gv) in gi[c * plane..(c + 1) * plane].iter_mut().zip(go) {
                                *acc += wv * gv;
                            }
                        }
                    }
                    send(*input, gi);
                }
                if wants(*weight) {
                    let mut gw = vec![0.0; co * ci];
                    for o in 0..co {
                        let go = &g[o * plane..(o + 1) * plane];
                        for c in 0..ci {
                            gw[o * ci + c] = go.iter().zip(x.channel(c)).map(|(a, b)| a * b).sum();
                        }
                    }
                    send(*weight, gw);
                }
                if let Some(b) = bias {
                    if wants(*b) {
                        send(*b, (0..co).map(|o| g[o * plane..(o + 1) * plane].iter().sum()).collect());
                    }
                }
            }
            Op::Tanh(a) => {
                if wants(*a) {
                    let y = nodes[idx].value.data();
                    send(*a, g.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect());
                }
            }
            Op::Sigmoid(a) => {
                if wants(*a) {
                    let y = nodes[idx].value.data();
                    send(*a, g.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect());
                }
            }
            Op::Sum(a) => {
                if wants(*a) {
                    send(*a, vec![g[0]; nodes[a.0].value.len()]);
                }
            }
            Op::Mean(a) => {
                if wants(*a) {
                    let n = nodes[a.0].value.len();
                    send(*a, vec![g[0] / n as f64; n]);
                }
            }
            Op::Mse(p, t) => {
                let (vp, vt) = (nodes[p.0].value.data(), nodes[t.0].value.data());
                let scale = 2.0 * g[0] / vp.len() as f64;
                if wants(*p) {
                    send(*p, vp.iter().zip(vt).map(|(a, b)| scale * (a - b)).collect());
                }
                if wants(*t) {
                    send(*t, vp.iter().zip(vt).map(|(a, b)| -scale * (a - b)).collect());
                }
            }
            Op::Upsample(a) => {
                if wants(*a) {
                    let x = &nodes[a.0].value;
                    let sp = x.spatial();
                    let c = x.channels();
                    let mut gi = vec![0.0; x.len()];
                    if sp.len() == 1 {
                        let w = sp[0];
                        for ch in 0..c {
                            for i in 0..w {
                                gi[ch * w + i] = g[ch * 2 * w + 2 * i] + g[ch * 2 * w + 2 * i + 1];
                            }
                        }
                    } else {
                        let (h, w) = (sp[0], sp[1]);
                        for ch in 0..c {
                            let go = &g[ch * 4 * h * w..(ch + 1) * 4 * h * w];
                            let gdst = &mut gi[ch * h * w..(ch + 1) * h * w];
                            for y in 0..2 * h {
                                for xx in 0..2 * w {
                                    gdst[(y / 2) * w + xx / 2] += go[y * 2 * w + xx];
                                }
                            }
                        }
                    }
                    send(*a, gi);
                }
            }
        }
        Ok(())
    }
}
