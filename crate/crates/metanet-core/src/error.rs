//! Error type shared across the crate.

use alloc::string::String;
use alloc::vec::Vec;

/// Crate-wide result alias.
pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// An operation was applied to tensors whose shapes do not conform.
    #[error("{op}: shape mismatch: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// A forward op produced NaN or infinity.
    #[error("{op}: non-finite value in output")]
    NonFinite { op: &'static str },
    /// A tensor was constructed with inconsistent shape/data.
    #[error("tensor: shape {shape:?} implies {expected} elements, got {got}")]
    BadTensor {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },
    /// A node handle was used with a tape it does not belong to.
    #[error("node belongs to a different tape")]
    TapeMismatch,
    /// backward() was called on a non-scalar node.
    #[error("backward: loss must be scalar, got shape {shape:?}")]
    LossNotScalar { shape: Vec<usize> },
    /// Cosine similarity against a zero-norm vector is undefined.
    #[error("cosine-similarity: zero-norm {which} vector")]
    ZeroNorm { which: &'static str },
    /// Two forward evaluations of a supposedly deterministic function disagreed.
    #[error("finite-diff check: function is not deterministic ({a} vs {b})")]
    NonDeterministic { a: f64, b: f64 },
    /// Invalid configuration or arguments.
    #[error("config: {0}")]
    Config(String),
    /// Episode sampling could not satisfy the plan.
    #[error("episode sampling: {0}")]
    Sampling(String),
    /// Dataset validation failed.
    #[error("dataset: {0}")]
    Dataset(String),
    /// A serialized file or buffer could not be decoded.
    #[error("decode: {0}")]
    Decode(String),
    /// Checkpoint format version is not supported.
    #[error("checkpoint: unsupported format version {found} (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },
    /// Training step aborted on a non-finite loss.
    #[error("non-finite loss at episode {episode}; recent losses: {history:?}")]
    NonFiniteLoss { episode: u64, history: Vec<f64> },
}
