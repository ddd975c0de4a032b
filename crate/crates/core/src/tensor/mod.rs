//! Dense tensors and the reverse-mode tape.

mod array;
pub mod checkpoint;
mod gradcheck;
pub mod kernels;
mod real;
mod tape;

pub use array::{inverse_permutation, strides, Tensor};
pub use checkpoint::{Checkpoint, Entry};
pub use gradcheck::{grad_check, grad_check_many, GradCheckReport};
pub use real::{fsum, DType, Real};
pub use tape::{softmax_rows, Gradients, Mode, RunningStats, Tape, Var};

#[cfg(test)]
mod tests;
