//! Minimal reverse-mode autodiff engine and the layers the countermeasure
//! networks are built from.
//!
//! A [`Tape`] records every primitive applied during one forward pass;
//! [`Tape::backward`] sweeps it once in reverse. Trainable tensors live in a
//! [`ParamStore`] and enter a tape as leaves through a [`Forward`] context,
//! which also carries the train/inference switch for batch norm.

pub mod check;
mod forward;
mod optim;
mod params;
mod tape;
mod tensor;

pub use forward::{check_unique_names, BatchNorm2d, BufferUpdates, Conv2d, Forward, Linear};
pub use optim::{noam_lr, Adam, AdamState, OptimizerConfig};
pub use params::{BufferId, ParamGrads, ParamId, ParamStore};
pub use tape::{log_softmax_vec, ConvGeom, Gradients, NormStats, Tape, Var};
pub use tensor::Tensor;
