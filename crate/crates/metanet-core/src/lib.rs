//! Meta-learning with gradient-generated fast weights for one-shot
//! classification.
//!
//! The crate implements the full pipeline in plain `f64`:
//!
//! - [`tensor`] / [`tape`]: dense tensors and reverse-mode automatic
//!   differentiation over a recorded operation tape,
//! - [`preprocess`]: coordinate-wise gradient preprocessing for the
//!   fast-weight generators,
//! - [`net`]: layer-augmented feed-forward networks (slow weights plus
//!   additive fast-weight paths),
//! - [`model`]: the meta learner itself — an embedding network, a base
//!   learner, two gradient-to-weight generators, and an external memory
//!   read with cosine-similarity attention,
//! - [`episodes`] / [`datasets`]: N-way K-shot task sampling and a compact
//!   binary image-set format with synthetic glyph generation,
//! - [`training`]: the outer ADAM loop, evaluation, and the generalization
//!   and continual-learning protocols,
//! - [`checkpoint`]: versioned binary snapshots of weights, optimizer, and
//!   RNG state.
//!
//! The crate is `no_std`-compatible (with `alloc`); file and terminal I/O
//! live in the companion CLI crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod adam;
pub mod checkpoint;
pub mod datasets;
pub mod episodes;
pub mod error;
pub mod gradcheck;
mod math;
pub mod model;
pub mod net;
pub mod ops;
pub mod preprocess;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tape::{GradMap, Node, Tape};
pub use tensor::Tensor;
