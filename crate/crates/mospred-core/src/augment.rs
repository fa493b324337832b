//! Label-preserving feature-space augmentations: speed, tempo, and pitch
//! analogs that expand a training corpus to 7x its size.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::corpus::{Corpus, FeatureSequence, FeatureStore, Rating, SplitTag, UtteranceRecord};
use crate::math;
use crate::{Error, Result};

/// First ceil(D/2) channels carry the tonal content (the block the pitch
/// transform rotates and the simulator's signal subspace).
pub fn tonal_block(dim: usize) -> usize {
    (dim + 1) / 2
}

/// One deterministic, label-preserving transform of a feature sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AugmentSpec {
    /// Resample the time axis by linear interpolation to round(T/factor).
    Speed(f64),
    /// Drop/duplicate frames (no interpolation) to round(T/factor).
    Tempo(f64),
    /// Cyclically shift the tonal channel block by k channels.
    Pitch(i32),
}

impl AugmentSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            AugmentSpec::Speed(f) | AugmentSpec::Tempo(f) => {
                if !(0.5..=2.0).contains(&f) {
                    return Err(Error::invalid(format!(
                        "augment factor {f} outside [0.5, 2.0]"
                    )));
                }
                Ok(())
            }
            AugmentSpec::Pitch(_) => Ok(()), // |k| < D is checked per-sequence
        }
    }

    /// Utterance-id suffix, e.g. `~speed0.9`, `~tempo1.1`, `~pitch-1`.
    pub fn suffix(&self) -> String {
        match *self {
            AugmentSpec::Speed(f) => format!("~speed{f}"),
            AugmentSpec::Tempo(f) => format!("~tempo{f}"),
            AugmentSpec::Pitch(k) => format!("~pitch{k}"),
        }
    }

    pub fn apply(&self, features: &FeatureSequence) -> Result<FeatureSequence> {
        self.validate()?;
        match *self {
            AugmentSpec::Speed(f) => speed(features, f),
            AugmentSpec::Tempo(f) => tempo(features, f),
            AugmentSpec::Pitch(k) => pitch(features, k),
        }
    }
}

/// The six standard variants yielding the 7x corpus.
pub fn default_specs() -> [AugmentSpec; 6] {
    [
        AugmentSpec::Speed(0.9),
        AugmentSpec::Speed(1.1),
        AugmentSpec::Tempo(0.9),
        AugmentSpec::Tempo(1.1),
        AugmentSpec::Pitch(-1),
        AugmentSpec::Pitch(1),
    ]
}

fn new_len(t_len: usize, factor: f64) -> usize {
    let n = math::round(t_len as f64 / factor) as usize;
    n.max(1)
}

/// Endpoint-aligned linear resampling of the time axis.
pub fn speed(features: &FeatureSequence, factor: f64) -> Result<FeatureSequence> {
    AugmentSpec::Speed(factor).validate()?;
    let (t_in, d) = (features.t_len(), features.dim());
    let t_out = new_len(t_in, factor);
    let x = features.data();
    let mut out = Vec::with_capacity(t_out * d);
    for t in 0..t_out {
        let pos = if t_out == 1 {
            0.0
        } else {
            t as f64 * (t_in - 1) as f64 / (t_out - 1) as f64
        };
        let lo = math::floor(pos) as usize;
        let hi = (lo + 1).min(t_in - 1);
        let w = pos - lo as f64;
        for i in 0..d {
            let a = x[lo * d + i] as f64;
            let b = x[hi * d + i] as f64;
            out.push(((1.0 - w) * a + w * b) as f32);
        }
    }
    FeatureSequence::new(t_out, d, out)
}

/// Duration change by frame copying: output frame t' is the input frame at
/// floor((t' + 0.5) * T / T').
pub fn tempo(features: &FeatureSequence, factor: f64) -> Result<FeatureSequence> {
    AugmentSpec::Tempo(factor).validate()?;
    let (t_in, d) = (features.t_len(), features.dim());
    let t_out = new_len(t_in, factor);
    let x = features.data();
    let mut out = Vec::with_capacity(t_out * d);
    for t in 0..t_out {
        let src = math::floor((t as f64 + 0.5) * t_in as f64 / t_out as f64) as usize;
        let src = src.min(t_in - 1);
        out.extend_from_slice(&x[src * d..(src + 1) * d]);
    }
    FeatureSequence::new(t_out, d, out)
}

/// Cyclic shift of the tonal channel block by `shift_k`; the remaining
/// channels pass through untouched.
pub fn pitch(features: &FeatureSequence, shift_k: i32) -> Result<FeatureSequence> {
    let (t_len, d) = (features.t_len(), features.dim());
    if shift_k.unsigned_abs() as usize >= d {
        return Err(Error::invalid(format!(
            "pitch shift {shift_k} out of range for {d} channels"
        )));
    }
    let block = tonal_block(d);
    let x = features.data();
    let mut out = x.to_vec();
    let shift = shift_k.rem_euclid(block as i32) as usize;
    for t in 0..t_len {
        for i in 0..block {
            let j = (i + shift) % block;
            out[t * d + j] = x[t * d + i];
        }
    }
    FeatureSequence::new(t_len, d, out)
}

/// Expands a training corpus with one transformed copy per spec, storing
/// the new feature sequences under suffixed keys.
pub fn augment_corpus(
    corpus: &Corpus,
    store: &mut FeatureStore,
    specs: &[AugmentSpec],
) -> Result<Corpus> {
    if corpus.split_tag() != SplitTag::Train {
        return Err(Error::invalid(format!(
            "augmentation is train-only, refusing to augment a {} corpus",
            corpus.split_tag().as_str()
        )));
    }
    for (i, a) in specs.iter().enumerate() {
        a.validate()?;
        for b in &specs[i + 1..] {
            if a.suffix() == b.suffix() {
                return Err(Error::invalid(format!(
                    "duplicate augmentation suffix '{}'",
                    a.suffix()
                )));
            }
        }
    }

    let mut records: Vec<UtteranceRecord> = corpus.utterances().to_vec();
    for utt in corpus.utterances() {
        let source = store.get(&utt.feature_ref)?.clone();
        for spec in specs {
            let suffix = spec.suffix();
            let new_id = format!("{}{suffix}", utt.utterance_id);
            let new_ref = format!("{}{suffix}", utt.feature_ref);
            store.insert(new_ref.clone(), spec.apply(&source)?)?;
            let ratings: Vec<Rating> = utt
                .ratings
                .iter()
                .map(|r| Rating::new(new_id.clone(), r.system_id.clone(), r.judge_id, r.score))
                .collect::<Result<_>>()?;
            records.push(UtteranceRecord::new(
                new_id,
                utt.system_id.clone(),
                new_ref,
                ratings,
            )?);
        }
    }
    Corpus::new(SplitTag::Train, corpus.judge_count(), records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, tag};
    use alloc::collections::BTreeMap;
    use alloc::vec;
    use rand::Rng;

    fn random_features(t_len: usize, d: usize, idx: u64) -> FeatureSequence {
        let mut rng = substream(21, tag::FEATURES, idx);
        let data: Vec<f32> = (0..t_len * d).map(|_| rng.gen_range(-2.0..2.0)).collect();
        FeatureSequence::new(t_len, d, data).unwrap()
    }

    #[test]
    fn speed_identity_and_lengths() {
        let f = random_features(100, 4, 0);
        assert_eq!(speed(&f, 1.0).unwrap(), f);
        assert_eq!(speed(&f, 2.0).unwrap().t_len(), 50);
        assert_eq!(speed(&f, 0.5).unwrap().t_len(), 200);
        assert_eq!(speed(&random_features(7, 3, 1), 1.1).unwrap().t_len(), 6);
        assert!(speed(&f, 0.4).is_err());
        assert!(speed(&f, 2.5).is_err());
    }

    #[test]
    fn speed_preserves_constant_sequences() {
        let f = FeatureSequence::new(30, 2, vec![1.25; 60]).unwrap();
        for factor in [0.5, 0.9, 1.1, 2.0] {
            let out = speed(&f, factor).unwrap();
            assert!(out.data().iter().all(|&v| v == 1.25), "factor {factor}");
        }
    }

    #[test]
    fn tempo_identity_and_frame_copies() {
        let f = random_features(50, 3, 2);
        assert_eq!(tempo(&f, 1.0).unwrap(), f);

        let out = tempo(&f, 0.9).unwrap();
        assert_eq!(out.t_len(), 56);
        let d = f.dim();
        for t in 0..out.t_len() {
            let frame = &out.data()[t * d..(t + 1) * d];
            let found = (0..f.t_len())
                .any(|s| &f.data()[s * d..(s + 1) * d] == frame);
            assert!(found, "output frame {t} is not a copy of any input frame");
        }
    }

    #[test]
    fn tempo_speedup_output_is_a_submultiset_of_input_frames() {
        let f = random_features(83, 4, 3);
        let out = tempo(&f, 1.7).unwrap();
        let d = f.dim();
        let key = |frame: &[f32]| -> Vec<u32> { frame.iter().map(|v| v.to_bits()).collect() };
        let mut counts: BTreeMap<Vec<u32>, i64> = BTreeMap::new();
        for t in 0..f.t_len() {
            *counts.entry(key(&f.data()[t * d..(t + 1) * d])).or_default() += 1;
        }
        for t in 0..out.t_len() {
            let c = counts.entry(key(&out.data()[t * d..(t + 1) * d])).or_default();
            *c -= 1;
            assert!(*c >= 0, "output frame {t} used more often than it occurs in the input");
        }
    }

    #[test]
    fn pitch_shift_rotates_and_inverts() {
        let f = random_features(12, 5, 4);
        assert_eq!(pitch(&f, 0).unwrap(), f);
        let shifted = pitch(&f, 2).unwrap();
        assert_ne!(shifted, f);
        assert_eq!(pitch(&shifted, -2).unwrap(), f);
        assert!(pitch(&f, 5).is_err());
        assert!(pitch(&f, -5).is_err());
    }

    #[test]
    fn pitch_preserves_per_frame_channel_multisets() {
        let f = random_features(9, 6, 5);
        let out = pitch(&f, 1).unwrap();
        let d = f.dim();
        let block = tonal_block(d);
        for t in 0..f.t_len() {
            let mut a: Vec<u32> =
                f.data()[t * d..t * d + block].iter().map(|v| v.to_bits()).collect();
            let mut b: Vec<u32> =
                out.data()[t * d..t * d + block].iter().map(|v| v.to_bits()).collect();
            a.sort_unstable();
            b.sort_unstable();
            assert_eq!(a, b, "tonal block of frame {t} is not a permutation");
            assert_eq!(
                &f.data()[t * d + block..(t + 1) * d],
                &out.data()[t * d + block..(t + 1) * d],
                "non-tonal channels of frame {t} changed"
            );
        }
    }

    fn training_corpus(n: usize, store: &mut FeatureStore) -> Corpus {
        let mut utts = Vec::new();
        for i in 0..n {
            let id = format!("u{i:03}");
            let ratings = vec![
                Rating::new(id.clone(), "sysA", 1, (i % 5 + 1) as u8).unwrap(),
                Rating::new(id.clone(), "sysA", 2, 3).unwrap(),
            ];
            store.insert(id.clone(), random_features(20 + i, 4, 100 + i as u64)).unwrap();
            utts.push(UtteranceRecord::new(id.clone(), "sysA", id, ratings).unwrap());
        }
        Corpus::new(SplitTag::Train, 2, utts).unwrap()
    }

    #[test]
    fn augment_corpus_yields_seven_fold_data_with_copied_labels() {
        let mut store = FeatureStore::new();
        let corpus = training_corpus(10, &mut store);
        let out = augment_corpus(&corpus, &mut store, &default_specs()).unwrap();
        assert_eq!(out.len(), 70);
        assert_eq!(store.len(), 70);

        for utt in corpus.utterances() {
            for spec in default_specs() {
                let id = format!("{}{}", utt.utterance_id, spec.suffix());
                let copy = out
                    .utterances()
                    .iter()
                    .find(|u| u.utterance_id == id)
                    .unwrap_or_else(|| panic!("missing augmented record {id}"));
                assert_eq!(copy.mos, utt.mos);
                assert_eq!(copy.system_id, utt.system_id);
                assert_eq!(copy.ratings.len(), utt.ratings.len());
                assert!(store.contains(&copy.feature_ref));
            }
        }
    }

    #[test]
    fn augment_corpus_edge_cases() {
        let mut store = FeatureStore::new();
        let corpus = training_corpus(3, &mut store);

        let unchanged = augment_corpus(&corpus, &mut store, &[]).unwrap();
        assert_eq!(unchanged, corpus);

        let dup = [AugmentSpec::Speed(0.9), AugmentSpec::Speed(0.9)];
        let err = augment_corpus(&corpus, &mut store, &dup).unwrap_err();
        assert!(alloc::string::ToString::to_string(&err).contains("~speed0.9"));

        let dev = corpus.with_tag(SplitTag::Dev).unwrap();
        assert!(augment_corpus(&dev, &mut store, &default_specs()).is_err());

        let mut empty_store = FeatureStore::new();
        assert!(matches!(
            augment_corpus(&corpus, &mut empty_store, &default_specs()),
            Err(Error::MissingFeatures(_))
        ));
    }
}
