//! Seeded random streams.
//!
//! Every stochastic operation takes an explicit generator. Independent
//! streams (per fold, per purpose) are derived from one base seed by
//! mixing tags through SplitMix64, so adding a stream never perturbs the
//! draws of another.

use rand::SeedableRng;

pub type Rng = rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `tags` into `base`, yielding a seed for an independent stream.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(base), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn seeded(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

pub fn stream(base: u64, tags: &[u64]) -> Rng {
    seeded(derive_seed(base, tags))
}

/// Stream tags, one per consumer.
pub mod tag {
    pub const FOLDS: u64 = 1;
    pub const INIT: u64 = 2;
    pub const CBN_INIT: u64 = 3;
    pub const SHUFFLE: u64 = 4;
    pub const AUGMENT: u64 = 5;
    pub const MIX: u64 = 6;
    pub const SUBSAMPLE: u64 = 7;
    pub const SYNTH: u64 = 8;
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: u64 = stream(7, &[1, 2]).random();
        let b: u64 = stream(7, &[1, 2]).random();
        let c: u64 = stream(7, &[2, 1]).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
