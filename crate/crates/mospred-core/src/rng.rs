//! Deterministic, counter-derived random streams.
//!
//! Every random decision in the pipeline draws from a ChaCha stream keyed by
//! `(master seed, domain tag, index)`. Streams are independent by cipher
//! construction, so per-utterance work can run in any order (or in parallel)
//! and still produce byte-identical corpora and checkpoints.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::math;

/// Domain tags for the substreams. Values are part of the reproducibility
/// contract: changing them changes every generated corpus.
pub mod tag {
    pub const SYSTEM: u64 = 1;
    pub const JUDGE: u64 = 2;
    pub const UTTERANCE: u64 = 3;
    pub const FEATURES: u64 = 4;
    pub const INIT: u64 = 5;
    pub const BATCH: u64 = 6;
    pub const MASK: u64 = 7;
    pub const SPLIT: u64 = 8;
    pub const GRADCHECK: u64 = 9;
    pub const PROFILE: u64 = 10;
    pub const TRANSFER: u64 = 11;
}

/// A seeded ChaCha stream for `(seed, tag, index)`.
///
/// The tag occupies the high 16 bits of the ChaCha stream id and the index
/// the low 48, so distinct `(tag, index)` pairs never collide.
pub fn substream(seed: u64, tag: u64, index: u64) -> ChaCha8Rng {
    debug_assert!(tag < (1 << 16));
    debug_assert!(index < (1 << 48));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((tag << 48) | index);
    rng
}

/// SplitMix64 finalizer, used to derive offset seeds (e.g. for a
/// domain-shifted sibling corpus) from a master seed.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Standard-normal sample via Box-Muller on the stream's uniforms.
pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    // gen::<f64>() is in [0, 1); shift to (0, 1] so the log is finite.
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen::<f64>();
    math::sqrt(-2.0 * math::ln(u1)) * math::cos(2.0 * core::f64::consts::PI * u2)
}

/// Normal sample with the given standard deviation, as f32.
pub fn normal_f32(rng: &mut ChaCha8Rng, sd: f32) -> f32 {
    (normal(rng) * sd as f64) as f32
}

/// Uniform sample in `[lo, hi)`.
pub fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.gen::<f64>()
}
