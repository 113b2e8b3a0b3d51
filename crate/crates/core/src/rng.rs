//! Seed plumbing. Every random draw in the crate goes through a ChaCha8
//! generator so that results are reproducible across platforms.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator for `seed` on the default stream.
pub fn from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream for one realization of an experiment.
///
/// `purpose` separates draws that must not share a stream (geometry, weights,
/// noise, ...) so that changing one of them does not shift the others.
pub fn stream(seed: u64, realization: u64, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ purpose.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(realization);
    rng
}
