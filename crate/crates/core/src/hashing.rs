//! Stable hashing and seed derivation shared by the embedder, the mock model,
//! and the optimizer.
//!
//! Everything here must stay bit-stable across releases: changing any of
//! these functions silently changes retrieval results and every seeded
//! replay.

use sha2::{Digest, Sha256};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a over raw bytes.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = FNV_OFFSET;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from a parent seed and a salt.
pub fn derive_seed(parent: u64, salt: u64) -> u64 {
    mix64(parent ^ mix64(salt))
}

/// Derives a child seed from a parent seed and a text salt (e.g. a message id).
pub fn derive_seed_str(parent: u64, salt: &str) -> u64 {
    derive_seed(parent, fnv1a64(salt.as_bytes()))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
