//! Seed derivation and the crate's canonical random source.
//!
//! Every parallel fan-out (kernel libraries, dataset records) derives a child
//! seed from `(master_seed, index)` with 64-bit FNV-1a so that results never
//! depend on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Seeded random source used throughout the crate.
pub type SvRng = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a over arbitrary bytes.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |hash, &b| {
        (hash ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

/// Child seed `FNV-1a(master_seed_le ‖ index_le)`.
pub fn derive_seed(master_seed: u64, index: u64) -> u64 {
    let mut buf = [0u8; 16];
    buf[..8].copy_from_slice(&master_seed.to_le_bytes());
    buf[8..].copy_from_slice(&index.to_le_bytes());
    fnv1a64(&buf)
}

pub fn rng_from_seed(seed: u64) -> SvRng {
    SvRng::seed_from_u64(seed)
}
