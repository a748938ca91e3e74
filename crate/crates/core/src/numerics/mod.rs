//! Dense tensors, a reverse-mode tape, and finite-difference checking.

pub mod gradcheck;
pub mod kernels;
mod tape;
mod tensor;

pub use gradcheck::{check_tape_fn, grad_check, primitive_suite, relative_error, GradCheckReport, DEFAULT_EPS};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{Real, Tensor};
