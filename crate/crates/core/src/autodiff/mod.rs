//! Reverse-mode differentiation and its finite-difference check.

mod gradcheck;
pub(crate) mod tape;

pub use gradcheck::{grad_check, relative_error, GradCheckReport};
pub use tape::{Gradients, Primitive, Tape, Var};
