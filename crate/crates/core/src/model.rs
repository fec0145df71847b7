//! The full model: micro and macro networks plus checkpoint conversion.

use serde::{Deserialize, Serialize};

use crate::data::Checkpoint;
use crate::error::{PimrlError, Result};
use crate::macro_net::{MacroConfig, MacroNet, MacroNodes};
use crate::micro_net::{MicroConfig, MicroNet, MicroNodes};
use crate::rng::SplitMix64;
use crate::solvers::PdeCase;
use crate::tensor::{Graph, NodeId, Tensor};

const INIT_STREAM: u64 = 10;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub micro: MicroConfig,
    #[serde(rename = "macro")]
    pub macro_: MacroConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PimrlModel {
    pub micro: MicroNet,
    pub macro_: MacroNet,
}

/// Both networks bound into one graph.
#[derive(Clone, Debug)]
pub struct ModelNodes {
    pub micro: MicroNodes,
    pub macro_: MacroNodes,
}

impl ModelNodes {
    /// Parameter nodes in [`PimrlModel::params`] order.
    pub fn params(&self) -> Vec<NodeId> {
        let mut v = self.micro.params();
        v.extend(self.macro_.params());
        v
    }
}

impl PimrlModel {
    /// Fresh weights drawn from a stream derived from `seed`.
    pub fn new(case: &PdeCase, config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = SplitMix64::derive(seed, INIT_STREAM);
        let micro = MicroNet::new(case, config.micro, &mut rng)?;
        let macro_ = MacroNet::new(case.n_fields(), case.dims(), config.macro_, &mut rng)?;
        Ok(Self { micro, macro_ })
    }

    pub fn config(&self) -> ModelConfig {
        ModelConfig {
            micro: self.micro.config,
            macro_: self.macro_.config,
        }
    }

    pub fn n_micro_params(&self) -> usize {
        self.micro.params().len()
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut v: Vec<String> = self.micro.param_names().into_iter().map(|n| format!("micro.{n}")).collect();
        v.extend(self.macro_.param_names().into_iter().map(|n| format!("macro.{n}")));
        v
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut v = self.micro.params();
        v.extend(self.macro_.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.micro.params_mut();
        v.extend(self.macro_.params_mut());
        v
    }

    pub fn bind(&self, g: &mut Graph, train_micro: bool, train_macro: bool) -> ModelNodes {
        ModelNodes {
            micro: self.micro.bind(g, train_micro),
            macro_: self.macro_.bind(g, train_macro),
        }
    }

    /// Uses existing nodes (in [`PimrlModel::params`] order) as the weights.
    pub fn bind_params(&self, g: &mut Graph, params: &[NodeId]) -> Result<ModelNodes> {
        let n = self.n_micro_params();
        if params.len() < n {
            return Err(PimrlError::InvalidArgument(format!("model takes {} parameter nodes, got {}", self.params().len(), params.len())));
        }
        Ok(ModelNodes {
            micro: self.micro.bind_params(g, &params[..n])?,
            macro_: self.macro_.bind_params(g, &params[n..])?,
        })
    }

    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        self.param_names().into_iter().zip(self.params().into_iter().cloned()).collect()
    }

    /// Overwrites every weight from `params`, matching by name and shape.
    pub fn load_params(&mut self, params: &[(String, Tensor)]) -> Result<()> {
        let names = self.param_names();
        if names.len() != params.len() {
            return Err(PimrlError::Config(format!(
                "checkpoint has {} tensors, model expects {}",
                params.len(),
                names.len()
            )));
        }
        for ((name, dst), (src_name, src)) in names.iter().zip(self.params_mut()).zip(params) {
            if name != src_name || dst.shape() != src.shape() {
                return Err(PimrlError::Config(format!(
                    "checkpoint tensor `{src_name}` {:?} does not fit `{name}` {:?}",
                    src.shape(),
                    dst.shape()
                )));
            }
            *dst = src.clone();
        }
        Ok(())
    }

    /// Rebuilds a model for `case` from checkpointed weights.
    pub fn from_checkpoint(case: &PdeCase, config: &ModelConfig, ck: &Checkpoint) -> Result<Self> {
        let mut m = Self::new(case, config, 0)?;
        m.load_params(&ck.params)?;
        Ok(m)
    }
}
