//! Dense tensors with reverse-mode automatic differentiation.
//!
//! Values live on a [`Tape`]; every primitive appends a node holding its output
//! and whatever it needs for the backward pass. [`Tape::backward`] walks the
//! record in reverse and accumulates gradients into the leaves.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheck};
pub use tape::{log_sum_exp, Gradients, Tape, Var};
pub use tensor::{Float, Tensor};
