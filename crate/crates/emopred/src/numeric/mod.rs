//! Deterministic numeric core: tensors, reverse-mode differentiation,
//! optimization, and gradient verification.
//!
//! Everything is generic over [`Scalar`] so the same graph code runs in
//! `f32` for training and in `f64` for finite-difference checks. All
//! randomness flows through the explicit [`Prng`], never a global source.

pub mod adam;
pub mod gradcheck;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use adam::AdamState;
pub use gradcheck::{grad_check, GradCheckReport};
pub use rng::Prng;
pub use tape::{Tape, Var, MASK_BIAS};
pub use tensor::{Parameter, Scalar, Tensor};
