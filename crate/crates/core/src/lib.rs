//! Test-time domain generalization with meta-learned variational neighbor labels.
//!
//! The crate is `no_std` (it needs `alloc`) and holds every numeric piece of the
//! pipeline: a tape-based reverse-mode autodiff engine that can differentiate
//! through one inner gradient step, small MLPs, domain construction, the
//! variational neighbor-label machinery, episodic meta-training, online
//! test-time generalization with its baseline ladder, and calibration metrics.
//! File formats, configuration and the command line live in `vnl-lab`.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod autodiff;
pub mod data;
mod error;
pub mod math;
pub mod meta;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod tensor;
pub mod ttg;
pub mod vnl;

pub use error::{Error, Result};
pub use tensor::Tensor;
