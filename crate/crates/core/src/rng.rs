//! Deterministic, splittable random streams.
//!
//! Every stochastic component draws from a `ChaCha8Rng` (a counter-based
//! generator) seeded through [`substream`], which mixes a parent seed with a
//! stream tag via two rounds of the SplitMix64 finalizer. The scheme is
//! documented here so other implementations can reproduce the exact streams:
//!
//! ```text
//! substream(seed, tag) = splitmix64(splitmix64(seed) ^ splitmix64(tag ^ GAMMA))
//! splitmix64(z): z += 0x9E3779B97F4A7C15 is NOT applied; finalizer only:
//!     z ^= z >> 30; z *= 0xBF58476D1CE4E5B9;
//!     z ^= z >> 27; z *= 0x94D049BB133111EB;
//!     z ^= z >> 31
//! GAMMA = 0x9E3779B97F4A7C15
//! ```
//!
//! Stream derivation used across the crate:
//! - scene stream: `substream(base_seed, TAG_SCENE ^ scene_id)`
//! - episode stream: `substream(scene_seed, TAG_TRAIN_EPISODE or TAG_INFER_EPISODE)`
//! - group branch stream: `substream(episode_seed, TAG_GROUP ^ group_id)`
//! - model training stream: `substream(base_seed, TAG_MODEL_TRAINING)`

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const TAG_SCENE: u64 = 0x5343_454e_4500_0000; // "SCENE"
pub const TAG_TRAIN_EPISODE: u64 = 0x5452_4149_4e00_0000; // "TRAIN"
pub const TAG_INFER_EPISODE: u64 = 0x494e_4645_5200_0000; // "INFER"
pub const TAG_GROUP: u64 = 0x4752_4f55_5000_0000; // "GROUP"
pub const TAG_MODEL_TRAINING: u64 = 0x4d4f_4445_4c00_0000; // "MODEL"
pub const TAG_CLIP_SAMPLER: u64 = 0x434c_4950_5300_0000; // "CLIPS"

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer (mixing function only, no stream increment).
#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z ^= z >> 30;
    z = z.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z ^= z >> 27;
    z = z.wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    z
}

/// Derive a child seed from a parent seed and a stream tag.
#[inline]
pub fn substream(seed: u64, tag: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ splitmix64(tag ^ GAMMA))
}

/// The crate-wide generator: counter-based, seedable, cheap to fork.
pub type Stream = ChaCha8Rng;

/// Construct the generator for a derived stream.
pub fn stream(seed: u64, tag: u64) -> Stream {
    ChaCha8Rng::seed_from_u64(substream(seed, tag))
}
