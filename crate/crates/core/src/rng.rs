//! Deterministic seeded RNG streams and substream derivation.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer; mixes substream labels into a base seed.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// RNG for a top-level seed.
pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed))
}

/// RNG for a labeled substream of `seed`, e.g. per (epoch, batch).
pub fn substream(seed: u64, labels: &[u64]) -> ChaCha8Rng {
    let mut s = splitmix64(seed);
    for &l in labels {
        s = splitmix64(s ^ splitmix64(l.wrapping_add(0xA5A5_A5A5_A5A5_A5A5)));
    }
    ChaCha8Rng::seed_from_u64(s)
}
