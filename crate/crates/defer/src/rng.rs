//! Seedable, stream-keyed random number generation.
//!
//! All randomness flows through ChaCha8 streams keyed by purpose and engine
//! iteration. Criterion draws at iteration t never consume state another
//! iteration or purpose observes, so adding checkpoints or toggling one
//! criterion cannot perturb the rest of a run.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamTag {
    Cr2 = 0,
    Cr3 = 1,
    TargetMeans = 2,
    Sampling = 3,
}

/// Fresh generator for `(seed, iteration, purpose)`.
pub fn stream_rng(seed: u64, iteration: u64, tag: StreamTag) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((iteration << 2) | tag as u64);
    rng
}
