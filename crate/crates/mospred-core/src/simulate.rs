//! Synthetic rated-speech corpora with known latent quality.
//!
//! Systems get a latent quality q_s, utterances jitter around it (q_u),
//! judges rate with personal bias and noise, and features encode q_u two
//! ways: signal-channel amplitude grows with quality, noise-channel
//! variance shrinks with it. A domain profile (channel permutation plus
//! per-channel affine) emulates recording-condition mismatch between
//! corpora.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::augment::tonal_block;
use crate::corpus::{Corpus, FeatureSequence, FeatureStore, Rating, SplitTag, UtteranceRecord};
use crate::math;
use crate::rng::{mix, normal, substream, tag};
use crate::{Error, Result};

/// Spread of the per-utterance amplitude wobble on the signal channels.
/// Deliberately not configurable: it sets how much quality information a
/// linear readout of pooled amplitudes can recover, which the acceptance
/// experiments depend on.
const SIGNAL_AMP_JITTER: f64 = 0.11;

/// Scale of the texture noise added on top of the signal channels.
const SIGNAL_TEXTURE: f64 = 0.03;

/// Fixed key deriving domain profiles, so a profile id means the same
/// transform in every corpus regardless of its simulation seed.
const PROFILE_KEY: u64 = 0x70f1;

/// Everything that determines one simulated corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatorConfig {
    pub n_systems: usize,
    pub utts_per_system: usize,
    /// Judge pool size N.
    pub n_judges: u32,
    /// Ratings per utterance K (distinct judges, K <= N).
    pub ratings_per_utterance: u32,
    pub feature_dim: usize,
    /// Inclusive frame-count range (T_min, T_max).
    pub frame_range: (usize, usize),
    pub judge_bias_sd: f64,
    /// Per-judge noise scale is drawn uniformly from this range.
    pub judge_noise_range: (f64, f64),
    /// Spread of utterance quality around its system quality.
    pub utterance_jitter_sd: f64,
    pub domain_profile_id: u32,
    pub seed: u64,
}

impl SimulatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_systems == 0 || self.utts_per_system == 0 {
            return Err(Error::invalid("need at least one system and one utterance per system"));
        }
        if self.n_judges == 0 {
            return Err(Error::invalid("judge pool must be non-empty"));
        }
        if self.ratings_per_utterance == 0 {
            return Err(Error::invalid("ratings_per_utterance must be at least 1"));
        }
        if self.ratings_per_utterance > self.n_judges {
            return Err(Error::invalid(format!(
                "cannot draw {} distinct judges from a pool of {}",
                self.ratings_per_utterance, self.n_judges
            )));
        }
        if self.feature_dim < 2 {
            return Err(Error::invalid("feature_dim must be at least 2 (signal + noise blocks)"));
        }
        if self.frame_range.0 < 1 || self.frame_range.0 > self.frame_range.1 {
            return Err(Error::invalid(format!(
                "frame_range ({}, {}) must satisfy 1 <= T_min <= T_max",
                self.frame_range.0, self.frame_range.1
            )));
        }
        let spreads_ok = self.judge_bias_sd >= 0.0
            && self.utterance_jitter_sd >= 0.0
            && self.judge_noise_range.0 >= 0.0
            && self.judge_noise_range.0 <= self.judge_noise_range.1;
        if !spreads_ok {
            return Err(Error::invalid("spreads must be non-negative with lo <= hi"));
        }
        Ok(())
    }
}

/// Ground-truth quality, kept out of everything the model ever sees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatentQuality {
    pub q_s: f64,
    pub q_u: f64,
}

/// Sidecar row tying an utterance to its latent quality.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentEntry {
    pub utterance_id: String,
    pub system_id: String,
    pub quality: LatentQuality,
}

fn clamp(v: f64, lo: f64, hi: f64) -> f64 {
    if v < lo {
        lo
    } else if v > hi {
        hi
    } else {
        v
    }
}

/// Per-channel permutation and affine transform emulating a domain.
struct DomainProfile {
    perm: Vec<usize>,
    gain: Vec<f64>,
    offset: Vec<f64>,
}

impl DomainProfile {
    /// Profile 0 is the identity; others derive from the profile id alone.
    fn build(profile_id: u32, dim: usize) -> DomainProfile {
        let mut perm: Vec<usize> = (0..dim).collect();
        let mut gain = alloc::vec![1.0f64; dim];
        let mut offset = alloc::vec![0.0f64; dim];
        if profile_id != 0 {
            let mut rng = substream(PROFILE_KEY, tag::PROFILE, profile_id as u64);
            use rand::seq::SliceRandom;
            perm.shuffle(&mut rng);
            for i in 0..dim {
                // Wide but invertible: gains in [0.25, 2.4), offsets large
                // enough to move activations across the ReLU kink. A model
                // trained on profile 0 alone degrades visibly here, while a
                // refitted probe loses nothing.
                gain[i] = rng.gen_range(0.25..2.4);
                offset[i] = rng.gen_range(-1.0..1.0);
            }
        }
        DomainProfile { perm, gain, offset }
    }

    fn apply(&self, frames: &mut [f32], t_len: usize, dim: usize) {
        let mut scratch = alloc::vec![0.0f32; dim];
        for t in 0..t_len {
            let row = &mut frames[t * dim..(t + 1) * dim];
            for i in 0..dim {
                scratch[self.perm[i]] = (self.gain[i] * row[i] as f64 + self.offset[i]) as f32;
            }
            row.copy_from_slice(&scratch);
        }
    }
}

/// Signal-channel amplitude for quality q: 0.25 at q=1 up to 1.0 at q=5.
fn amplitude(q: f64) -> f64 {
    0.25 + 0.75 * (q - 1.0) / 4.0
}

/// Noise-channel standard deviation: 1.0 at q=1 down to 0.15 at q=5.
fn noise_sd(q: f64) -> f64 {
    0.15 + 0.85 * (5.0 - q) / 4.0
}

/// Deterministic feature synthesis for one utterance.
///
/// The caller supplies the RNG (one private stream per utterance), so
/// identical inputs and stream state give identical frames.
pub fn synthesize_features(
    q_u: f64,
    t_len: usize,
    dim: usize,
    domain_profile_id: u32,
    rng: &mut ChaCha8Rng,
) -> Result<FeatureSequence> {
    if !(1.0..=5.0).contains(&q_u) {
        return Err(Error::invalid(format!("q_u {q_u} outside [1, 5]")));
    }
    if t_len < 1 || dim < 2 {
        return Err(Error::invalid("features need T >= 1 and D >= 2"));
    }
    let block = tonal_block(dim);
    let two_pi = 2.0 * core::f64::consts::PI;

    let phases: Vec<f64> = (0..block).map(|_| rng.gen_range(0.0..two_pi)).collect();
    let amp = (amplitude(q_u) + SIGNAL_AMP_JITTER * normal(rng)).max(0.05);
    let sd = noise_sd(q_u);

    let mut data = alloc::vec![0.0f32; t_len * dim];
    for t in 0..t_len {
        for j in 0..block {
            // Smooth per-channel weight so a +-1 channel rotation stays mild.
            let w = 0.75 + 0.25 * math::sin(two_pi * (j + 1) as f64 / (block + 1) as f64);
            let omega = 0.2 + 0.6 * (j + 1) as f64 / block as f64;
            let s = 0.6 + 0.4 * math::sin(omega * t as f64 + phases[j]);
            data[t * dim + j] = (amp * w * s + SIGNAL_TEXTURE * normal(rng)) as f32;
        }
        for j in block..dim {
            data[t * dim + j] = (sd * normal(rng)) as f32;
        }
    }
    DomainProfile::build(domain_profile_id, dim).apply(&mut data, t_len, dim);
    FeatureSequence::new(t_len, dim, data)
}

/// K distinct judge ids drawn uniformly without replacement from 1..=n.
fn draw_judges(n: u32, k: u32, rng: &mut ChaCha8Rng) -> Vec<u32> {
    let mut pool: Vec<u32> = (1..=n).collect();
    for i in 0..k as usize {
        let j = rng.gen_range(i..pool.len());
        pool.swap(i, j);
    }
    pool.truncate(k as usize);
    pool
}

/// Generates the corpus, its features, and the ground-truth sidecar.
///
/// Every utterance draws from its own counter-derived RNG streams, so
/// output is byte-identical for a given config no matter the host.
pub fn simulate_corpus(
    config: &SimulatorConfig,
) -> Result<(Corpus, FeatureStore, Vec<LatentEntry>)> {
    config.validate()?;
    let n = config.n_judges;

    // Judge panel: per-judge additive bias and noise scale.
    let mut judge_bias = alloc::vec![0.0f64; n as usize + 1];
    let mut judge_scale = alloc::vec![0.0f64; n as usize + 1];
    for j in 1..=n {
        let mut rng = substream(config.seed, tag::JUDGE, j as u64);
        judge_bias[j as usize] = config.judge_bias_sd * normal(&mut rng);
        judge_scale[j as usize] = if config.judge_noise_range.1 > config.judge_noise_range.0 {
            rng.gen_range(config.judge_noise_range.0..config.judge_noise_range.1)
        } else {
            config.judge_noise_range.0
        };
    }

    let mut records = Vec::new();
    let mut store = FeatureStore::new();
    let mut latent = Vec::new();
    for s in 0..config.n_systems {
        let system_id = format!("sys{s:03}");
        let mut sys_rng = substream(config.seed, tag::SYSTEM, s as u64);
        // Systems cluster around the middle of the scale, as real panels
        // do; ranking them takes resolution, not just a coarse estimate.
        let q_s = clamp(3.0 + 0.55 * normal(&mut sys_rng), 1.0, 5.0);
        for u in 0..config.utts_per_system {
            let utterance_id = format!("{system_id}_utt{u:04}");
            let global = (s * config.utts_per_system + u) as u64;
            let mut utt_rng = substream(config.seed, tag::UTTERANCE, global);

            let q_u = clamp(q_s + config.utterance_jitter_sd * normal(&mut utt_rng), 1.0, 5.0);
            let t_len = utt_rng.gen_range(config.frame_range.0..=config.frame_range.1);
            let judges = draw_judges(n, config.ratings_per_utterance, &mut utt_rng);
            let mut ratings = Vec::with_capacity(judges.len());
            for &j in &judges {
                let noise = judge_scale[j as usize] * normal(&mut utt_rng);
                let raw = q_u + judge_bias[j as usize] + noise;
                let score = clamp(math::round(raw), 1.0, 5.0) as u8;
                ratings.push(Rating::new(utterance_id.clone(), system_id.clone(), j, score)?);
            }

            let mut feat_rng = substream(config.seed, tag::FEATURES, global);
            let features = synthesize_features(
                q_u,
                t_len,
                config.feature_dim,
                config.domain_profile_id,
                &mut feat_rng,
            )?;
            store.insert(utterance_id.clone(), features)?;
            latent.push(LatentEntry {
                utterance_id: utterance_id.clone(),
                system_id: system_id.clone(),
                quality: LatentQuality { q_s, q_u },
            });
            records.push(UtteranceRecord::new(
                utterance_id.clone(),
                system_id.clone(),
                utterance_id,
                ratings,
            )?);
        }
    }
    latent.sort_by(|a, b| a.utterance_id.cmp(&b.utterance_id));
    let corpus = Corpus::new(SplitTag::Train, n, records)?;
    Ok((corpus, store, latent))
}

/// Same corpus recipe under a different domain (and a derived seed), for
/// cross-corpus transfer experiments.
pub fn shift_domain(config: &SimulatorConfig, new_profile_id: u32) -> SimulatorConfig {
    let mut shifted = config.clone();
    shifted.domain_profile_id = new_profile_id;
    shifted.seed = mix(config.seed.wrapping_add(new_profile_id as u64).wrapping_add(1));
    shifted
}

/// Drops every rating, yielding the unlabeled twin of a corpus (features
/// stay shared through the same refs).
pub fn strip_ratings(corpus: &Corpus) -> Result<Corpus> {
    let utts: Vec<UtteranceRecord> = corpus
        .utterances()
        .iter()
        .map(|u| {
            UtteranceRecord::new(
                u.utterance_id.clone(),
                u.system_id.clone(),
                u.feature_ref.clone(),
                Vec::new(),
            )
        })
        .collect::<Result<_>>()?;
    Corpus::new(SplitTag::Unlabeled, corpus.judge_count(), utts)
}
