//! Dense-tensor substrate with reverse-mode differentiation.
//!
//! [`Tensor`] is a row-major `f64` array. [`Tape`] records a forward pass and
//! replays it backwards to accumulate gradients; [`Session`] binds a
//! [`ParamStore`] to tape leaves so models can fetch parameters by name.
//! [`grad_check`] verifies any scalar loss against central finite
//! differences, which is the correctness contract for every trainable layer
//! in this crate.

mod gradcheck;
mod kernels;
pub mod ops;
mod optim;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport, GradCheckSettings, ParamCheck};
pub use kernels::{sigmoid, softplus};
pub use optim::{Optimizer, OptimizerKind};
pub use params::ParamStore;
pub use tape::{Session, Tape, Var};
pub use tensor::Tensor;
