//! Minimal dense-tensor numerics for the distillation lab.
//!
//! Forward ops are recorded on a [`Graph`] (a tape); [`Graph::backward`]
//! walks it in reverse and returns [`Gradients`] for every node that needs
//! one. Model parameters live in a [`ParamStore`] outside the tape and are
//! bound into a graph on first use, so one store can be used by several
//! forward passes in the same graph and still receive a single accumulated
//! gradient.
//!
//! Everything is generic over [`Real`] so that training runs in `f32` while
//! gradient checks run the same code in `f64`.

#[cfg(feature = "testing")]
pub mod check;
mod error;
mod graph;
mod ops;
mod optim;
mod params;
mod real;
mod shape;
mod tensor;

pub use error::{Result, TensorError};
pub use graph::{Gradients, Graph, NodeId};
pub use optim::{adam_update, Adam, AdamConfig, LinearDecay};
pub use params::ParamStore;
pub use real::Real;
pub use tensor::Tensor;
