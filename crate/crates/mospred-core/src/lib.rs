//! Core algorithms for judge-conditioned mean-opinion-score prediction.
//!
//! This crate is `no_std` (with `alloc`) and holds everything that is pure
//! computation: the rated-corpus data model, the synthetic corpus simulator,
//! a small dense neural stack with exact reverse-mode gradients, the
//! dual-head predictor and its three training stages, feature-space
//! augmentation, and the MSE/LCC/SRCC/KTAU evaluation metrics.
//!
//! File formats, CLI orchestration, and everything else that needs an OS
//! live in the companion `mospred-cli` crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod adam;
pub mod augment;
pub mod corpus;
pub mod dapt;
pub mod error;
pub mod gradcheck;
pub mod math;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod refine;
pub mod rng;
pub mod simulate;
pub mod tensor;
pub mod train;

pub use error::Error;
pub use tensor::{Parameter, Tensor};

/// Result alias used throughout the crate.
pub type Result<T> = core::result::Result<T, Error>;
