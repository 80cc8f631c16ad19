//! Seed-stream derivation.
//!
//! Every randomized component draws from its own ChaCha8 stream. The 256-bit
//! stream key is `SHA-256(master_seed_le || component_name || 0x00 || index_le)`,
//! so any implementation that agrees on this rule reproduces the same streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

fn stream_key(master_seed: u64, component: &str, index: u64) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(master_seed.to_le_bytes());
    hasher.update(component.as_bytes());
    hasher.update([0u8]);
    hasher.update(index.to_le_bytes());
    hasher.finalize().into()
}

/// Independent generator for `(master_seed, component, index)`.
pub fn stream(master_seed: u64, component: &str, index: u64) -> Rng {
    ChaCha8Rng::from_seed(stream_key(master_seed, component, index))
}

/// A 64-bit seed derived with the same rule, for handing to sub-components.
pub fn derive_seed(master_seed: u64, component: &str, index: u64) -> u64 {
    let key = stream_key(master_seed, component, index);
    u64::from_le_bytes(key[..8].try_into().expect("8 bytes"))
}

/// Generator seeded directly from a 64-bit value (e.g. a stored instance seed).
pub fn from_seed(seed: u64) -> Rng {
    stream(seed, "", 0)
}
