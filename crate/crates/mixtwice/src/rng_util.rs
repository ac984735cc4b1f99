//! Counter-derived random streams.
//!
//! Each (seed, stream, tag) triple keys an independent ChaCha stream, so
//! replicates and restarts can run in parallel with reproducible draws.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

pub(crate) fn derive_rng(seed: u64, stream: u64, tag: &[u8; 8]) -> ChaCha12Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&stream.to_le_bytes());
    key[16..24].copy_from_slice(tag);
    ChaCha12Rng::from_seed(key)
}
