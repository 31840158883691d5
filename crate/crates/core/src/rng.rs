//! Named random streams derived from a single run seed.
//!
//! Every consumer draws from its own ChaCha8 stream so that, for example,
//! changing the corpus size never perturbs weight initialization.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream for network weight initialization.
pub const STREAM_INIT: u64 = 0x1;
/// Stream for mini-batch shuffling during training.
pub const STREAM_SHUFFLE: u64 = 0x2;
/// Base stream for corpus synthesis; image `i` uses `STREAM_CORPUS << 32 | i`.
pub const STREAM_CORPUS: u64 = 0x3;
/// Stream for train/eval/test split assignment.
pub const STREAM_SPLIT: u64 = 0x4;
/// Stream for class-label layout and rater perturbation in corpus synthesis.
pub const STREAM_LABELS: u64 = 0x5;

pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn corpus_item(seed: u64, index: u64) -> ChaCha8Rng {
    stream(seed, (STREAM_CORPUS << 32) | index)
}
