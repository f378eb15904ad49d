//! Core algorithms for transfer-learning species classification.
//!
//! Everything in this crate is pure computation over in-memory values and
//! builds without `std` (an allocator is required). Decoding files, writing
//! artifacts, the CLI and the inference service live in the `bombus` crate.
//!
//! Module map:
//!
//! - [`image`]: standardized RGB images and stretch resizing.
//! - [`dataset`]: class catalog, manifest records, stratified splitting and
//!   negative-class injection.
//! - [`augment`]: rotation, contrast, salt-and-pepper and occlusion plus the
//!   seeded policy that composes them.
//! - [`model`]: backbone adapters, the trainable head, optimizers, the
//!   learning-rate schedule, training and overfit detection.
//! - [`ensemble`]: probability matrices, softmax summation, top-k selection
//!   and the feature-concatenation composite.
//! - [`eval`]: top-k accuracy, confusion matrices, precision/recall, leakage
//!   and count-correlation series.

#![cfg_attr(not(test), no_std)]
#![deny(unsafe_code)]

extern crate alloc;

pub mod augment;
pub mod dataset;
pub mod ensemble;
mod error;
pub mod eval;
pub mod image;
pub mod model;
pub mod rng;

pub use error::{Error, Result};
