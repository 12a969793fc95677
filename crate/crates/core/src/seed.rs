//! Deterministic seed derivation.
//!
//! Every random stream in a run is derived from the run seed plus a tag and
//! a small tuple of indices (round, client, ...). Streams never share state,
//! so evaluation order and thread count cannot change results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a string tag and indices into a new seed.
pub fn derive(base: u64, tag: &str, indices: &[u64]) -> u64 {
    let mut h = splitmix64(base);
    for b in tag.bytes() {
        h = splitmix64(h ^ u64::from(b));
    }
    for &i in indices {
        h = splitmix64(h ^ i.wrapping_mul(0xD6E8_FEB8_6659_FD93));
    }
    h
}

/// A fresh random stream for `(base, tag, indices)`.
pub fn stream(base: u64, tag: &str, indices: &[u64]) -> SimRng {
    SimRng::seed_from_u64(derive(base, tag, indices))
}
