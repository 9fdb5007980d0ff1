//! Segmentation-free recognition of handwritten numeral strings.
//!
//! The crate is organized around the stages of the recognition system:
//!
//! - [`nncore`] — a minimal CNN engine: tensors, layer forward/backward
//!   passes, softmax + cross-entropy, SGD with momentum and weight decay,
//!   and an early-stopped training loop.
//! - [`datagen`] — ingestion of an isolated-digit corpus (IDX containers)
//!   and synthesis of touching numeral strings of 2-4 digits, with
//!   connection-type tagging and writer-disjoint splits.
//! - [`modelzoo`] — the concrete network architectures for the length
//!   classifier and the digit classifiers, plus the unified class-index
//!   codec covering isolated digits, pairs, and triples.
//! - [`fusion`] — the three recognition pipelines (dynamic selection,
//!   end-to-end, end-to-end combined with the length classifier) and the
//!   threshold fusion rule they share.
//! - [`eval`] — confusion matrices, Top-k rates, per-connection-type
//!   accuracy, error attribution, and report rendering.

pub mod datagen;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod modelzoo;
pub mod nncore;

pub use error::{Error, Result};
