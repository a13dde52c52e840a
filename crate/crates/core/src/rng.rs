//! Keyed random streams.
//!
//! Every random draw in the crate comes from a ChaCha20 stream whose key is
//! derived from `(seed, purpose, ids…)`. Adding tasks or replications never
//! shifts the draws of existing ones.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Identifies the key-derivation scheme; bump when it changes.
pub const RNG_VERSION: &str = "chacha20-splitmix64-v1";

pub type StreamRng = ChaCha20Rng;

/// What a stream is used for. The discriminant is part of the key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    BaseCov = 1,
    TaskCov = 2,
    Samples = 3,
    Support = 4,
    NovelCov = 5,
    NovelSamples = 6,
    Replication = 7,
    MatrixTest = 8,
}

#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Order-sensitive 64-bit digest of `(seed, purpose, ids)`.
pub fn derive_key(seed: u64, purpose: Purpose, ids: &[u64]) -> u64 {
    let mut h = splitmix64(seed ^ splitmix64(purpose as u64));
    for (pos, &id) in ids.iter().enumerate() {
        h = splitmix64(h ^ splitmix64(id.wrapping_add((pos as u64 + 1) << 56)));
    }
    h
}

pub fn stream(seed: u64, purpose: Purpose, ids: &[u64]) -> StreamRng {
    let mut h = derive_key(seed, purpose, ids);
    let mut bytes = [0u8; 32];
    for chunk in bytes.chunks_mut(8) {
        h = splitmix64(h);
        chunk.copy_from_slice(&h.to_le_bytes());
    }
    ChaCha20Rng::from_seed(bytes)
}
