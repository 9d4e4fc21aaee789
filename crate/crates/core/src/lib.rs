//! Adversarial training with loss-ranked data selection.
//!
//! Each mini-batch pairs `b'` clean samples with their PGD counterparts,
//! ranks all `2b'` rows by softmax cross-entropy and backpropagates only the
//! `P_up` fraction with the largest loss. `P_up` can be fixed or adapted
//! per epoch from the previous epoch's accuracy.
//!
//! Modules:
//!
//! - [`numerics`]: matrices, the ReLU classifier, analytic and finite-difference gradients
//! - [`attacks`]: FGSM, PGD and the minimum-budget search
//! - [`selection`]: error signal, top-loss and random selection, the P_up schedule
//! - [`training`]: batch composition, the epoch loop, evaluation and diagnostics
//! - [`data`]: IDX, CSV, synthetic blobs, splitting and the binary cache
//! - [`cli`]: configuration files, run orchestration and exported artifacts

pub mod attacks;
pub mod cli;
pub mod data;
mod error;
pub mod numerics;
pub mod selection;
pub mod training;

pub use error::{Error, Result};
