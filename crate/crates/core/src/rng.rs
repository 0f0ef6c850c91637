//! Seed derivation so every sample / epoch / worker gets its own stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic child generator for `seed` and a path of stream ids.
pub fn derive_rng(seed: u64, stream: &[u64]) -> ChaCha8Rng {
    let mut s = splitmix(seed);
    for &id in stream {
        s = splitmix(s ^ splitmix(id));
    }
    ChaCha8Rng::seed_from_u64(s)
}
