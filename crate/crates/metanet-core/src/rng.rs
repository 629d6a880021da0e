//! Deterministic RNG streams.
//!
//! Every random decision in the crate draws from a ChaCha8 stream derived
//! from `(seed, purpose)`. Streams never interact, so e.g. evaluation can
//! never perturb training-side state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream ids, kept distinct per purpose.
pub mod stream {
    pub const INIT: u64 = 1;
    pub const TRAIN: u64 = 2;
    pub const DATASET: u64 = 3;
    /// Evaluation trials use `EVAL_BASE + trial_index`.
    pub const EVAL_BASE: u64 = 1_000_000;
    /// Sampling of evaluation trial sequences.
    pub const EVAL_SAMPLE: u64 = 3_000_000;
    /// Protocol-level reinitializations (x-way heads, fresh base learners).
    pub const PROTOCOL: u64 = 4_000_000;
}

/// A ChaCha stream for `(seed, stream_id)`.
pub fn stream_rng(seed: u64, stream_id: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    rng
}

/// Serializable RNG state: seed, stream, and word position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

pub fn save_state(rng: &Rng) -> RngState {
    RngState {
        seed: rng.get_seed(),
        stream: rng.get_stream(),
        word_pos: rng.get_word_pos(),
    }
}

pub fn restore_state(state: &RngState) -> Rng {
    let mut rng = ChaCha8Rng::from_seed(state.seed);
    rng.set_stream(state.stream);
    rng.set_word_pos(state.word_pos);
    rng
}
