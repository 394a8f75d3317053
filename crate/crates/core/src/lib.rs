//! Projected-gradient unlearning for small feed-forward classifiers.
//!
//! The crate trains MLP/CNN classifiers from scratch, caches per-layer
//! Gram matrices of input representations, and removes the influence of a
//! forget set by descending an unlearning loss along gradients projected
//! orthogonally to the retain set's core gradient space.
//!
//! Module map:
//!
//! * [`linalg`]: dense matrices, Jacobi eigensolver, im2col.
//! * [`nn`]: layers, forward/backward passes, SGD training.
//! * [`subspace`]: Gram accumulation and subtraction, eigenbasis, projector.
//! * [`unlearn`]: unlearning loss, projected epochs, incremental and depoison runs.
//! * [`data`]: synthetic datasets, IDX ingestion, forget splits, label flips.
//! * [`eval`]: error rates, entropies, ROC/AUC and membership inference.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod nn;
pub mod subspace;
pub mod unlearn;

pub use error::{Error, Result};
pub use linalg::Matrix;
