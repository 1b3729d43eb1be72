//! Seed fan-out.
//!
//! A single global seed is expanded into independent named substreams.
//! The rule is
//!
//! ```text
//! sub_seed = first 8 bytes (little endian) of
//!            SHA-256("har-kit/seed/v1" || seed_le || 0x00 || name || 0x00 || index_le)
//! ```
//!
//! and every substream is driven by a ChaCha8 generator seeded with
//! `sub_seed`. Stream names in use: `split`, `init`, `dropout`, `augment`,
//! `mask`, `shuffle`, `forest-tree`, `pairs`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

pub fn derive_seed(seed: u64, stream: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(b"har-kit/seed/v1");
    h.update(seed.to_le_bytes());
    h.update([0u8]);
    h.update(stream.as_bytes());
    h.update([0u8]);
    h.update(index.to_le_bytes());
    let digest = h.finalize();
    let mut out = [0u8; 8];
    out.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(out)
}

pub fn rng_from(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

pub fn substream(seed: u64, stream: &str, index: u64) -> Rng {
    rng_from(derive_seed(seed, stream, index))
}
