//! Dense reverse-mode autodiff and the Adam optimizer.

mod adam;
mod gradcheck;
mod graph;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use gradcheck::grad_check;
pub use graph::{Axis, Gradients, Graph, Var};
pub use tensor::Tensor;
