//! Seed stream splitting.
//!
//! Every invocation takes one master seed. Independent consumers (sampling,
//! layer-type assignment, initialization, shuffling, ...) derive their own
//! 64-bit seed as the first eight bytes (little-endian) of
//! `SHA-256(master_seed.to_le_bytes() || label_bytes)`. Labels are fixed
//! strings such as `"sample"` or `"train/init"`, optionally followed by an
//! index (`"search/iter/3"`). Changing one consumer never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derives a child seed from `seed` for the stream named `label`.
pub fn derive(seed: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// Seeded generator for the stream named `label`.
pub fn rng(seed: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, label))
}

/// SplitMix64 finalizer; a cheap integer hash used for reproducible noise.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Maps a 64-bit integer to a float uniform in `[0, 1)`.
pub fn unit_f64(z: u64) -> f64 {
    (z >> 11) as f64 / (1u64 << 53) as f64
}
