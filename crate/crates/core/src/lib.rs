//! Early action prediction from partially observed videos.
//!
//! A clip is split into `K` segments. Each segment is summarised by a
//! temporal-difference encoder ([`encoder`]) and the summaries are folded in
//! order by an LSTM ([`predictor`]) that emits class logits after every
//! segment, so a prediction is available at each observation ratio `k/K`.
//!
//! Everything runs on a small define-by-run autodiff tape ([`autodiff`]) in
//! `f64`. [`synth`] generates a procedural moving-sprite corpus whose classes
//! are indistinguishable below a known observation ratio, and [`harness`]
//! trains, evaluates and reports.

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod encoder;
pub mod error;
pub mod harness;
mod linalg;
pub mod ops;
pub mod params;
pub mod predictor;
pub mod synth;
pub mod tensor;
pub mod video;

pub use error::{Error, Result};
pub use tensor::Tensor;
