//! Minimal reverse-mode automatic differentiation for the DUSty networks.
//!
//! The engine records a tape per forward pass ([`Graph`]) and computes
//! vector-Jacobian products by emitting ordinary graph operations, so a
//! gradient can itself be differentiated. The R1 penalty relies on this.
//!
//! Convolutions wrap horizontally (the range image is a cylinder) and
//! zero-pad vertically.

mod adam;
mod checkpoint;
mod error;
mod gradcheck;
mod graph;
pub mod kernels;
mod params;
pub mod rng;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, CheckpointHeader, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use error::{Result, TensorError};
pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{GatherMap, Graph, Var};
pub use kernels::ConvGeom;
pub use params::{equalized_scale, ParamRole, ParamSet};
pub use tensor::Tensor;
