//! Seed derivation.
//!
//! Every random stream in a run is derived from the run seed plus a stream
//! tag and an index, never from a shared generator. This keeps results
//! independent of evaluation order, thread scheduling and resume points.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a. Stable across platforms and compiler versions.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = FNV_OFFSET;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Mixes a base seed with a stream tag and an index.
pub fn derive_seed(seed: u64, tag: &str, index: u64) -> u64 {
    splitmix(splitmix(seed ^ fnv1a(tag.as_bytes())) ^ splitmix(index))
}

/// Seed for a stream keyed by several string parts (instance id, annotator name, ...).
pub fn derive_seed_parts(seed: u64, tag: &str, parts: &[&str]) -> u64 {
    let mut acc = derive_seed(seed, tag, parts.len() as u64);
    for part in parts {
        acc = splitmix(acc ^ fnv1a(part.as_bytes()));
    }
    acc
}

pub fn stream(seed: u64, tag: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tag, index))
}
