//! Physics-informed multi-scale recurrent learning for PDE forecasting.
//!
//! A fine-step *micro* network (forward Euler over a product-of-convolutions
//! block plus fixed finite-difference stencils for known terms) is interleaved
//! with a coarse-step *macro* network (encoder, ConvLSTM cell, decoder with a
//! residual connection). Running a few micro steps before each macro step keeps
//! long rollouts close to the physics while the macro step limits how many
//! micro steps accumulate error.
//!
//! Module map:
//! - [`tensor`]: reverse-mode autodiff engine, Adam and step-decay schedule.
//! - [`physics`]: stencils and periodic padding.
//! - [`solvers`]: reference integrators and multi-scale trajectory generation.
//! - [`micro_net`], [`macro_net`], [`model`]: the two networks.
//! - [`scheduler`]: rollout loops combining both networks.
//! - [`training`]: pretraining, joint training and evaluation.
//! - [`data`]: MSTD trajectory and PMCK checkpoint containers, dataset splits.
//! - [`metrics`]: RMSE, MAE, Pearson correlation and high-correlation time.
//! - [`cli`]: the command implementations behind the `pimrl` binary.

pub mod cli;
pub mod data;
pub mod error;
pub mod macro_net;
pub mod metrics;
pub mod micro_net;
pub mod model;
pub mod physics;
pub mod rng;
pub mod scheduler;
pub mod solvers;
pub mod tensor;
pub mod training;

pub use error::{PimrlError, Result};
pub use tensor::{Field, Tensor};
