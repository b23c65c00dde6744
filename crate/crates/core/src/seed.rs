//! Stable per-item seed derivation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(mut h: u64, bytes: &[u8]) -> u64 {
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for one (item, pass) pair. Independent of processing order and
/// stable across platforms and releases.
pub fn derive_seed(base: u64, item_id: &str, pass: u32) -> u64 {
    let mut h = fnv1a(FNV_OFFSET, &base.to_le_bytes());
    h = fnv1a(h, item_id.as_bytes());
    h = fnv1a(h, &[0xff]);
    h = fnv1a(h, &pass.to_le_bytes());
    splitmix64(h)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
