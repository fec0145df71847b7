//! Fine-step network: a product-of-convolutions block for the unknown part of
//! the right-hand side, fixed finite-difference convolutions for the known
//! part, advanced with forward Euler.
//!
//! `u ← u + δt · (W · ∏_l (K_l ⋆ u + b_l) + Σ physics(u))`

use serde::{Deserialize, Serialize};

use crate::error::{PimrlError, Result};
use crate::physics::{apply_stencil, Stencil};
use crate::rng::SplitMix64;
use crate::solvers::PdeCase;
use crate::tensor::{ConvGeometry, Field, Graph, NodeId, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MicroConfig {
    /// Parallel conv layers multiplied together (N_l).
    pub n_layers: usize,
    /// Channels per layer (N_c).
    pub channels: usize,
    /// Kernel extent per spatial dimension (odd).
    pub kernel: usize,
    /// Include the fixed physics-based convolution.
    pub physics: bool,
}

impl Default for MicroConfig {
    fn default() -> Self {
        Self {
            n_layers: 3,
            channels: 16,
            kernel: 5,
            physics: true,
        }
    }
}

/// A known linear term: `coefficients[c] * stencil` applied to field `c`.
/// Never trained.
#[derive(Clone, Debug, PartialEq)]
pub struct PhysicsTerm {
    pub stencil: Stencil,
    pub coefficients: Vec<f64>,
    kernel: Tensor,
}

impl PhysicsTerm {
    pub fn new(stencil: Stencil, coefficients: Vec<f64>) -> Self {
        let kernel = stencil.to_conv_kernel(&coefficients);
        Self {
            stencil,
            coefficients,
            kernel,
        }
    }

    /// The channel-diagonal conv kernel used inside the network.
    pub fn kernel(&self) -> &Tensor {
        &self.kernel
    }

    /// Direct stencil evaluation, independent of the conv engine.
    pub fn apply(&self, u: &Field) -> Result<Field> {
        let mut out = apply_stencil(u, &self.stencil)?;
        for (c, s) in self.coefficients.iter().enumerate() {
            out.channel_mut(c).iter_mut().for_each(|v| *v *= s);
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MicroNet {
    pub config: MicroConfig,
    pub n_fields: usize,
    pub dims: usize,
    /// Micro step δt.
    pub dt: f64,
    /// `n_layers` kernels of shape `[channels, n_fields, kernel(, kernel)]`.
    pub kernels: Vec<Tensor>,
    /// `n_layers` biases of shape `[channels]`.
    pub biases: Vec<Tensor>,
    /// 1×1 combiner `[n_fields, channels]`.
    pub combiner: Tensor,
    physics: Vec<PhysicsTerm>,
}

/// Graph handles for one forward pass.
#[derive(Clone, Debug)]
pub struct MicroNodes {
    pub kernels: Vec<NodeId>,
    pub biases: Vec<NodeId>,
    pub combiner: NodeId,
    physics: Vec<NodeId>,
}

impl MicroNodes {
    /// Trainable parameter nodes in [`MicroNet::params`] order.
    pub fn params(&self) -> Vec<NodeId> {
        let mut v = Vec::with_capacity(2 * self.kernels.len() + 1);
        for (k, b) in self.kernels.iter().zip(&self.biases) {
            v.push(*k);
            v.push(*b);
        }
        v.push(self.combiner);
        v
    }
}

impl MicroNet {
    /// Network for `case` with its known terms and `dt = case.dt_micro`.
    pub fn new(case: &PdeCase, config: MicroConfig, rng: &mut SplitMix64) -> Result<Self> {
        let physics = case
            .known_terms()?
            .into_iter()
            .map(|(s, c)| PhysicsTerm::new(s, c))
            .collect();
        Self::with_physics(case.n_fields(), case.dims(), case.dt_micro, config, physics, rng)
    }

    pub fn with_physics(
        n_fields: usize,
        dims: usize,
        dt: f64,
        config: MicroConfig,
        physics: Vec<PhysicsTerm>,
        rng: &mut SplitMix64,
    ) -> Result<Self> {
        if config.n_layers == 0 || config.channels == 0 || config.kernel % 2 == 0 {
            return Err(PimrlError::Config(format!(
                "micro net needs n_layers >= 1, channels >= 1 and an odd kernel, got {config:?}"
            )));
        }
        if !(dims == 1 || dims == 2) || n_fields == 0 || !(dt > 0.0) {
            return Err(PimrlError::Config(format!("micro net: dims {dims}, fields {n_fields}, dt {dt}")));
        }
        for p in &physics {
            if p.stencil.dims() != dims || p.coefficients.len() != n_fields {
                return Err(PimrlError::Config("physics term does not fit the field layout".into()));
            }
        }
        let mut kshape = vec![config.channels, n_fields];
        kshape.extend(std::iter::repeat_n(config.kernel, dims));
        let fan_in = (n_fields * config.kernel.pow(dims as u32)) as f64;
        let std = 0.1 / fan_in.sqrt();
        let kernels = (0..config.n_layers)
            .map(|_| Tensor::from_fn(&kshape, |_| std * rng.normal()))
            .collect();
        let biases = (0..config.n_layers).map(|_| Tensor::zeros(&[config.channels])).collect();
        let cstd = 0.1 / (config.channels as f64).sqrt();
        let combiner = Tensor::from_fn(&[n_fields, config.channels], |_| cstd * rng.normal());
        Ok(Self {
            config,
            n_fields,
            dims,
            dt,
            kernels,
            biases,
            combiner,
            physics,
        })
    }

    pub fn physics_terms(&self) -> &[PhysicsTerm] {
        &self.physics
    }

    /// Zeros the combiner, which zeros the whole product block.
    pub fn zero_pi_block(&mut self) {
        self.combiner.data_mut().fill(0.0);
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut v = Vec::new();
        for l in 0..self.kernels.len() {
            v.push(format!("kernel.{l}"));
            v.push(format!("bias.{l}"));
        }
        v.push("combiner".into());
        v
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut v: Vec<&Tensor> = Vec::new();
        for (k, b) in self.kernels.iter().zip(&self.biases) {
            v.push(k);
            v.push(b);
        }
        v.push(&self.combiner);
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v: Vec<&mut Tensor> = Vec::new();
        for (k, b) in self.kernels.iter_mut().zip(self.biases.iter_mut()) {
            v.push(k);
            v.push(b);
        }
        v.push(&mut self.combiner);
        v
    }

    /// Places the weights in `g`; physics kernels are always constants.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> MicroNodes {
        MicroNodes {
            kernels: self.kernels.iter().map(|k| g.leaf(k.clone(), trainable)).collect(),
            biases: self.biases.iter().map(|b| g.leaf(b.clone(), trainable)).collect(),
            combiner: g.leaf(self.combiner.clone(), trainable),
            physics: self.physics.iter().map(|p| g.constant(p.kernel.clone())).collect(),
        }
    }

    /// Uses existing nodes (in [`MicroNet::params`] order) as the weights.
    pub fn bind_params(&self, g: &mut Graph, params: &[NodeId]) -> Result<MicroNodes> {
        let n = self.kernels.len();
        if params.len() != 2 * n + 1 {
            return Err(PimrlError::InvalidArgument(format!("micro net takes {} parameter nodes, got {}", 2 * n + 1, params.len())));
        }
        for (id, t) in params.iter().zip(self.params()) {
            if g.shape(*id) != t.shape() {
                return Err(PimrlError::ShapeMismatch {
                    op: "micro bind_params",
                    lhs: t.shape().to_vec(),
                    rhs: g.shape(*id).to_vec(),
                });
            }
        }
        Ok(MicroNodes {
            kernels: (0..n).map(|l| params[2 * l]).collect(),
            biases: (0..n).map(|l| params[2 * l + 1]).collect(),
            combiner: params[2 * n],
            physics: self.physics.iter().map(|p| g.constant(p.kernel.clone())).collect(),
        })
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != self.dims + 1 || shape[0] != self.n_fields {
            let mut expected = vec![self.n_fields];
            expected.extend(&shape[1.min(shape.len())..]);
            return Err(PimrlError::ShapeMismatch {
                op: "micro_net",
                lhs: expected,
                rhs: shape.to_vec(),
            });
        }
        Ok(())
    }

    pub fn pi_block_node(&self, g: &mut Graph, w: &MicroNodes, u: NodeId) -> Result<NodeId> {
        self.check_input(g.shape(u))?;
        let mut prod: Option<NodeId> = None;
        for (k, b) in w.kernels.iter().zip(&w.biases) {
            let y = g.conv(u, *k, Some(*b), ConvGeometry::PERIODIC)?;
            prod = Some(match prod {
                None => y,
                Some(p) => g.mul(p, y)?,
            });
        }
        g.conv1x1(prod.expect("n_layers >= 1"), w.combiner, None)
    }

    /// Full right-hand side estimate: Π-block plus the physics terms when
    /// `physics` is set.
    pub fn rhs_node(&self, g: &mut Graph, w: &MicroNodes, u: NodeId, physics: bool) -> Result<NodeId> {
        let mut f = self.pi_block_node(g, w, u)?;
        if physics {
            for k in &w.physics {
                let t = g.conv(u, *k, None, ConvGeometry::PERIODIC)?;
                f = g.add(f, t)?;
            }
        }
        Ok(f)
    }

    /// One Euler step as graph nodes.
    pub fn step_node(&self, g: &mut Graph, w: &MicroNodes, u: NodeId, physics: bool) -> Result<NodeId> {
        let f = self.rhs_node(g, w, u, physics)?;
        let inc = g.scale(f, self.dt);
        g.add(u, inc)
    }

    pub fn pi_block(&self, u: &Field) -> Result<Field> {
        let mut g = Graph::leaves_only();
        let w = self.bind(&mut g, false);
        let x = g.constant(u.clone());
        let y = self.pi_block_node(&mut g, &w, x)?;
        Ok(g.value(y).clone())
    }

    /// One Euler step with the configured physics setting.
    pub fn step(&self, u: &Field) -> Result<Field> {
        self.step_with(u, self.config.physics, 1)
    }

    /// One Euler step; `step_index` is reported on divergence.
    pub fn step_with(&self, u: &Field, physics: bool, step_index: usize) -> Result<Field> {
        let mut g = Graph::leaves_only();
        let w = self.bind(&mut g, false);
        let x = g.constant(u.clone());
        let y = self.step_node(&mut g, &w, x, physics)?;
        let out = g.value(y);
        if !out.is_finite() {
            return Err(PimrlError::Divergence {
                phase: "micro step",
                step: step_index,
            });
        }
        Ok(out.clone())
    }

    /// `[u_1, …, u_k]` with `u_{j+1} = step(u_j)`.
    pub fn rollout(&self, u0: &Field, k_steps: usize) -> Result<Vec<Field>> {
        self.rollout_with(u0, k_steps, self.config.physics)
    }

    pub fn rollout_with(&self, u0: &Field, k_steps: usize, physics: bool) -> Result<Vec<Field>> {
        if k_steps == 0 {
            return Err(PimrlError::InvalidArgument("micro rollout needs k_steps >= 1".into()));
        }
        let mut out: Vec<Field> = Vec::with_capacity(k_steps);
        let mut cur = u0.clone();
        for j in 1..=k_steps {
            cur = self.step_with(&cur, physics, j)?;
            out.push(cur.clone());
        }
        Ok(out)
    }
}
