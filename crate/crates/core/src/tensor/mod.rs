//! Dense `f64` tensors and a define-by-run reverse-mode graph.

mod array;
mod graph;
pub mod kernels;

pub use array::Tensor;
pub use graph::{masked_softmax_values, Gradients, Graph, ParamId, ParamStore, Var};
