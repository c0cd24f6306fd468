//! Dense-matrix reverse-mode differentiation: a row-major `f64` tensor, a
//! recording tape with vector-Jacobian products for each op, and Adam.

pub mod adam;
pub mod tape;
pub mod tensor;

pub use adam::{clip_global_norm, Adam, AdamConfig};
pub use tape::{Gradients, NodeId, Tape};
pub use tensor::Tensor;
