//! Sequential-recommendation laboratory: a small reverse-mode tensor core,
//! FFT-based frequency re-scaling, SASRec and BSARec encoders, dataset
//! ingestion with leave-one-out splits, training and full-catalog ranking
//! evaluation.
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below pin the usual 64-bit instantiation.

pub mod data;
pub mod error;
pub mod eval;
pub mod models;
pub mod scalar;
pub mod spectral;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::{grad_check, Gradients, Tape, Tensor, Var};

pub type Tensor64 = Tensor<f64>;
pub type Tensor32 = Tensor<f32>;
pub type Tape64 = Tape<f64>;
