//! Core of the HG-TNet hybrid graph-transformer classifier.
//!
//! Everything here is pure computation over `alloc` collections: the tensor
//! engine with reverse-mode autodiff, the image augmentation stack, the
//! network itself, losses and the Adam optimizer, the training/evaluation
//! loops and the evaluation metrics. File formats, dataset IO and the command
//! line live in the `hgtnet` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod error;
mod math;
pub mod rng;
pub mod data;
pub mod tensor;
pub mod model;
pub mod gradcheck;
pub mod metrics;
pub mod train;

pub use error::{Error, Result};
pub use rng::RngStream;
pub use model::{HgtNet, ModelConfig, ParamSet};
pub use tensor::{finite_difference_gradient, Activation, Tensor};
