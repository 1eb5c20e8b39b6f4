//! Dense f64 matrices with a reverse-mode gradient tape.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport};
pub use tape::{Gradients, Tape, Var, NORM_GUARD};
pub use tensor::Tensor;

pub(crate) use tensor::read_u32;
