//! Deterministic seed derivation.
//!
//! Every random decision in the engine is drawn from a [`ChaCha8Rng`] seeded
//! through the helpers here, so a run is fully determined by the seeds in its
//! configs. Sub-streams are derived by mixing the base seed with stream
//! labels (unit counters, batch indices, replication numbers, context
//! fingerprints) rather than by sharing one sequential generator; this keeps
//! every decision independent of call order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer: a cheap, well-mixed u64 -> u64 permutation.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Order-sensitive mix of two words: `mix2(a, b) != mix2(b, a)` in general.
pub fn mix2(a: u64, b: u64) -> u64 {
    splitmix64(splitmix64(a).wrapping_add(b))
}

/// Order-sensitive mix of three words.
pub fn mix3(a: u64, b: u64, c: u64) -> u64 {
    splitmix64(mix2(a, b).wrapping_add(c))
}

/// FNV-1a over raw bytes; stable across platforms and processes (unlike the
/// standard library's default hasher, which is randomly keyed).
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Stable fingerprint of a feature vector plus pretest strata. Used to key
/// probability caches and to seed context-dependent sub-streams; two
/// bitwise-identical contexts always collide (that is the point).
pub fn context_fingerprint(features: &[f64], false_stratum: u8, true_stratum: u8) -> u64 {
    let mut bytes = Vec::with_capacity(features.len() * 8 + 2);
    for &f in features {
        bytes.extend_from_slice(&f.to_bits().to_le_bytes());
    }
    bytes.push(false_stratum);
    bytes.push(true_stratum);
    fnv1a64(&bytes)
}

/// A ChaCha generator for the given derived seed.
pub fn chacha(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
