//! Dense tensors, forward kernels, reverse-mode differentiation and tensor I/O.

pub mod io;
mod kernels;
mod params;
mod tape;
mod tensor;

pub use kernels::{avgpool2d, conv2d, matmul, permute, softmax_rows};
pub use params::{ParamStore, ParamVars};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{Real, Tensor};

/// Finite stand-in for negative infinity in additive attention masks.
pub const NEG: f64 = -1e9;
