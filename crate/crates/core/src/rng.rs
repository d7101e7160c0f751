//! Seeded random streams.
//!
//! Every consumer of randomness asks for a named stream derived from the
//! global seed, so adding a new consumer never shifts the draws of another.
//! Streams are ChaCha8 generators whose 64-bit stream id is a hash of the
//! stream name (and an optional index).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8], mut h: u64) -> u64 {
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Stable 64-bit key for a stream name.
pub fn stream_key(name: &str) -> u64 {
    fnv1a(name.as_bytes(), FNV_OFFSET)
}

/// Generator for `(seed, name)`.
pub fn stream(seed: u64, name: &str) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_key(name));
    rng
}

/// Generator for `(seed, name, index)`, e.g. one stream per episode.
pub fn indexed_stream(seed: u64, name: &str, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(splitmix64(stream_key(name) ^ splitmix64(index)));
    rng
}

/// Derive a child seed, for APIs that take a plain `u64` seed.
pub fn derive_seed(seed: u64, name: &str, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(stream_key(name).wrapping_add(index)))
}
