//! Semi-supervised fine-tuning with pseudo group contrast.
//!
//! A pretrained encoder is fine-tuned on a few labeled examples and many
//! unlabeled ones at once. Labeled examples contribute cross-entropy and a
//! group contrast against keys of their class; unlabeled examples contribute
//! the same group contrast with the classifier's current prediction as the
//! class. Keys from both streams share one class-partitioned FIFO store.

// `!(x > 0.0)` checks also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod datagen;
pub mod error;
pub mod keystore;
pub mod losses;
pub mod model;
pub mod nn;
pub mod optim;
pub mod plot;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
