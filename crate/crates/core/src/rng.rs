//! Randomness contract: one seedable ChaCha stream per chain.
//!
//! Chain `i` of a run seeded with `seed` uses stream `i` of the ChaCha8 key
//! derived from `seed`, so chains are independent and reproducible regardless
//! of how they are scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type ChainRng = ChaCha8Rng;

pub fn chain_rng(seed: u64, chain: u64) -> ChainRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain);
    rng
}
