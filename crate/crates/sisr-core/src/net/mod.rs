//! Minimal reverse-mode autodiff: exactly the ops the super-resolution
//! architecture needs (conv 1x1/3x3, relu, add, channel concat, log-cosh),
//! generic over f32/f64, with ADAM and a finite-difference verification
//! suite built in.

pub mod adam;
pub mod conv;
pub mod gradcheck;
pub mod graph;
pub mod tensor;

pub use adam::{Adam, AdamConfig};
pub use graph::{Graph, NodeId};
pub use tensor::{Scalar, Tensor};
