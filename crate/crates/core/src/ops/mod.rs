//! Differentiable layers built on the tape.

pub(crate) mod conv;
pub(crate) mod dense;
pub(crate) mod pool;
pub(crate) mod recurrent;

pub use conv::{output_extent, Conv2dSpec};
pub use dense::LinearSpec;
pub use recurrent::LstmSpec;
