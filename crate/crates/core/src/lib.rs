//! Lightweight vision-Mamba image classifier built from scratch.
//!
//! The crate provides a small `f64` tensor library with reverse-mode
//! differentiation ([`autograd`]), the selective state-space scan and gated
//! Mamba block ([`ssm`]), the six-stage classifier with its attention bridge
//! ([`arch`]), the training recipe ([`train`]), the tile preprocessing
//! pipeline ([`data`]) and binary-classification metrics ([`eval`]).

pub mod arch;
pub mod autograd;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod parallel;
pub mod params;
pub mod ssm;
pub mod tensor;
pub mod train;

pub use autograd::{Tape, Var};
pub use error::{Error, Result};
pub use params::ParamStore;
pub use tensor::Tensor;
