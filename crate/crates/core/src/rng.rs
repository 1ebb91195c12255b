//! Seedable, counter-based randomness owned by the caller.
//!
//! Every sampling entry point takes `&mut Rng`; there is no global state.
//! Parallel fan-out derives independent streams from a master seed so the
//! final tallies do not depend on the worker count.

use rand::SeedableRng;

/// The generator used throughout the crate. ChaCha is counter-based, so
/// streams derived from the same seed never overlap.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Build a generator from a bare seed.
pub fn rng_from_seed(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Build a generator for one chunk of a partitioned sampling job.
///
/// Chunks with distinct indices under the same seed produce independent
/// streams (ChaCha stream separation), so a job split into fixed-size
/// chunks yields the same draws no matter how chunks are scheduled.
pub fn chunk_rng(seed: u64, chunk_index: u64) -> Rng {
    let mut rng = Rng::seed_from_u64(seed);
    rng.set_stream(chunk_index);
    rng
}

/// Mix a master seed with a tag into a derived seed (splitmix64 finalizer).
///
/// Used to give each (example, phase) pair of a certification campaign its
/// own seed, keeping selection and estimation draws disjoint.
pub fn derive_seed(master: u64, tag: u64) -> u64 {
    let mut z = master ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
