//! Dense tensors and a tape-based reverse-mode differentiation engine.

mod gradcheck;
mod kernels;
mod ndtensor;
mod tape;

pub use gradcheck::{finite_diff_check, finite_diff_check_many, rel_err, GradCheckReport};
pub use ndtensor::{NdTensor, PadMode};
pub use tape::{Tape, Var};

#[cfg(test)]
mod tests;
