//! Minimal dense-tensor reverse-mode automatic differentiation in f64.
//!
//! Values live in [`Tensor`]s; computations are recorded on a [`Graph`]
//! tape and differentiated with [`Graph::backward`]. Trainable weights are
//! kept in a [`ParamRegistry`] and placed on a fresh graph for each forward
//! pass with [`ParamRegistry::bind`].

mod error;
mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use error::{Error, Result};
pub use gradcheck::{grad_check, rel_error, DEFAULT_STEP};
pub use graph::{huber, sigmoid, Gradients, Graph, Var};
pub use params::{
    read_checkpoint, write_checkpoint, Bound, Param, ParamId, ParamRegistry, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use tensor::Tensor;
