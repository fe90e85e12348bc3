//! Stable seed derivation. Sub-seeds depend only on their inputs, never on
//! iteration or thread order, so independent streams (per group, per fold,
//! per restart) can be drawn in parallel.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for the stream named `tag` under `base`.
pub fn derive(base: u64, tag: &str) -> u64 {
    splitmix64(splitmix64(base) ^ fnv1a(tag.as_bytes()))
}

/// Seed for the `index`-th stream named `tag` under `base`.
pub fn derive_indexed(base: u64, tag: &str, index: u64) -> u64 {
    splitmix64(derive(base, tag) ^ splitmix64(index))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
