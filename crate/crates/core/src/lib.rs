//! Trajectory-conditioned video diffusion at desk scale.
//!
//! Masks and arrows (or a known motion field) become colored point
//! trajectories; a small convolutional encoder compresses them; an adapter
//! branch inside every temporal self-attention block turns the encoded
//! trajectories into an attention map that both steers the block output and
//! masks the original branch.

pub mod attention;
pub mod diffusion;
pub mod encoder;
pub mod error;
pub mod evalkit;
pub mod imageio;
pub mod numerics;
pub mod rng;
pub mod trajgen;

pub use error::{Error, Result};
pub use numerics::{ParamStore, Real, Tape, Tensor, Var};
