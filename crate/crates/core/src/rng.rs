//! Named random streams.
//!
//! Every consumer of randomness draws from its own ChaCha stream derived from
//! the run seed, so enabling or disabling one consumer (masking, say) never
//! shifts the draws seen by another (batch order, initialization).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Parameter initialization.
pub const INIT: u64 = 1 << 62;
/// Feature masking during saliency-guided training.
pub const MASK: u64 = (1 << 62) + 1;
/// Visualization masking.
pub const VISUALIZE: u64 = (1 << 62) + 2;
/// Per-epoch shuffles use stream `SHUFFLE_BASE + epoch`.
pub const SHUFFLE_BASE: u64 = 0;
/// Per-image degradation streams use `DEGRADE_BASE + image index`.
pub const DEGRADE_BASE: u64 = 1 << 61;

pub fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}
