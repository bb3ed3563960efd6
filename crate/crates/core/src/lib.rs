//! TakuNet: a compact CNN for aerial emergency-scene classification.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`]: dense NCHW tensors in f16/f32/f64 and primitive array ops.
//! - [`nn`]: differentiable operators (forward + vector-Jacobian products).
//! - [`arch`]: the TakuNet model graph, parameter/FLOP analysis, channel
//!   derivation and checkpoints.
//! - [`train`]: RMSProp with momentum, step learning-rate schedule, k-fold
//!   cross-validation and the fit loop.
//! - [`data`]: dataset indexing, image decoding/resizing and augmentation.
//! - [`eval`]: confusion matrix, F1 scores, latency benchmarks and reports.

pub mod arch;
pub mod data;
pub mod error;
pub mod eval;
pub mod kv;
pub mod nn;
pub mod tensor;
pub mod train;
#[doc(hidden)]
pub mod testutil;

pub use error::{Error, Result};
pub use tensor::{Precision, Tensor};
