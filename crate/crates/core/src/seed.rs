//! Deterministic sub-seed derivation.
//!
//! Every random stream in a simulation is keyed from one 64-bit master seed.
//! A sub-seed is derived as
//!
//! ```text
//! sub_seed = splitmix64(splitmix64(master ^ fnv1a64(tag)) ^ index)
//! ```
//!
//! where `splitmix64` is the finalizer of Steele et al.'s SplitMix64 generator
//! and `fnv1a64` is the 64-bit FNV-1a hash of the UTF-8 tag. The rule is part of
//! the reproducibility contract and must not change between releases.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream purpose tags.
pub mod tag {
    pub const CODEBOOK: &str = "codebook";
    pub const LDPC: &str = "ldpc";
    pub const INTERLEAVER: &str = "interleaver";
    pub const MESSAGES: &str = "messages";
    pub const CHANNEL: &str = "channel";
    pub const NOISE: &str = "noise";
    pub const SWEEP_POINT: &str = "sweep-point";
    pub const TRIAL: &str = "trial";
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives the sub-seed for stream `tag` number `index` under `master`.
pub fn derive_seed(master: u64, tag: &str, index: u64) -> u64 {
    splitmix64(splitmix64(master ^ fnv1a64(tag.as_bytes())) ^ index)
}

/// Seeded generator used for every random stream in the crate.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivation_is_stable() {
        // Frozen: changing the mixing rule breaks reproducibility of stored runs.
        assert_eq!(fnv1a64(b""), FNV_OFFSET);
        assert_eq!(fnv1a64(b"a"), 0xaf63_dc4c_8601_ec8c);
        let s = derive_seed(42, tag::CHANNEL, 7);
        assert_eq!(s, derive_seed(42, tag::CHANNEL, 7));
        assert_ne!(s, derive_seed(42, tag::NOISE, 7));
        assert_ne!(s, derive_seed(42, tag::CHANNEL, 8));
        assert_ne!(s, derive_seed(43, tag::CHANNEL, 7));
    }
}
