//! Core of privshield: a learned image encoder is trained against a model
//! inversion adversary so that its output keeps facial attributes predictable
//! while resisting reconstruction of the identity. The crate is `no_std`
//! (with `alloc`) and holds the data model, networks, losses, the alternating
//! trainer, the black-box attacks and the metrics.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod attacks;
pub mod data;
pub mod error;
pub mod experiment;
pub mod losses;
pub mod metrics;
pub mod nets;
pub mod optim;
pub mod real;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use real::Real;
pub use tensor::Tensor;
