//! Rated-utterance corpora: ratings, score distributions, and splits.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::rng::{substream, tag};
use crate::tensor::Tensor;
use crate::{Error, Result};

/// One judge's integer opinion score for one utterance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rating {
    pub utterance_id: String,
    pub system_id: String,
    /// 1-based; judge 0 is reserved for the virtual mean-opinion judge and
    /// never appears in stored ratings.
    pub judge_id: u32,
    pub score: u8,
}

impl Rating {
    pub fn new(
        utterance_id: impl Into<String>,
        system_id: impl Into<String>,
        judge_id: u32,
        score: u8,
    ) -> Result<Self> {
        if judge_id == 0 {
            return Err(Error::invalid("judge_id 0 is reserved; stored ratings start at 1"));
        }
        if !(1..=5).contains(&score) {
            return Err(Error::invalid(format!("score {score} outside 1..=5")));
        }
        Ok(Rating {
            utterance_id: utterance_id.into(),
            system_id: system_id.into(),
            judge_id,
            score,
        })
    }
}

/// Five-bin score distribution over scores 1..=5 (index c holds score c+1).
pub type Dist5 = [f64; 5];

/// Mean of a five-bin distribution over the scores 1..=5.
pub fn expectation(p: &Dist5) -> f64 {
    let mut acc = 0.0f64;
    for (c, &v) in p.iter().enumerate() {
        acc += (c as f64 + 1.0) * v;
    }
    acc
}

/// Per-score empirical distribution: component c is count(score == c+1)/K.
pub fn empirical_distribution(ratings: &[Rating]) -> Result<Dist5> {
    if ratings.is_empty() {
        return Err(Error::invalid("no ratings"));
    }
    let mut counts = [0u32; 5];
    for r in ratings {
        counts[(r.score - 1) as usize] += 1;
    }
    let k = ratings.len() as f64;
    let mut p = [0.0f64; 5];
    for c in 0..5 {
        p[c] = counts[c] as f64 / k;
    }
    Ok(p)
}

/// Mean opinion score, defined as the expectation of the empirical score
/// distribution so that the two are bitwise identical by construction.
pub fn compute_mos(ratings: &[Rating]) -> Result<f64> {
    Ok(expectation(&empirical_distribution(ratings)?))
}

/// One utterance with its ratings and a reference to its feature file.
#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceRecord {
    pub utterance_id: String,
    pub system_id: String,
    /// Key into a [`FeatureStore`]; the std companion maps it to a file.
    pub feature_ref: String,
    pub ratings: Vec<Rating>,
    /// `None` only for rating-less utterances in unlabeled corpora.
    pub mos: Option<f64>,
}

impl UtteranceRecord {
    pub fn new(
        utterance_id: impl Into<String>,
        system_id: impl Into<String>,
        feature_ref: impl Into<String>,
        ratings: Vec<Rating>,
    ) -> Result<Self> {
        let utterance_id = utterance_id.into();
        for r in &ratings {
            if r.utterance_id != utterance_id {
                return Err(Error::invalid(format!(
                    "rating for {} attached to utterance {}",
                    r.utterance_id, utterance_id
                )));
            }
        }
        let mos = if ratings.is_empty() { None } else { Some(compute_mos(&ratings)?) };
        Ok(UtteranceRecord {
            utterance_id,
            system_id: system_id.into(),
            feature_ref: feature_ref.into(),
            ratings,
            mos,
        })
    }

    /// Eq.-style distribution target for this utterance.
    pub fn distribution(&self) -> Result<Dist5> {
        empirical_distribution(&self.ratings)
    }
}

/// Which leg of the pipeline a corpus feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitTag {
    Train,
    Dev,
    Test,
    Unlabeled,
}

impl SplitTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Dev => "dev",
            SplitTag::Test => "test",
            SplitTag::Unlabeled => "unlabeled",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitTag::Train),
            "dev" => Ok(SplitTag::Dev),
            "test" => Ok(SplitTag::Test),
            "unlabeled" => Ok(SplitTag::Unlabeled),
            other => Err(Error::invalid(format!("unknown split tag '{other}'"))),
        }
    }
}

/// An immutable collection of utterances sharing one judge pool of size N.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    split_tag: SplitTag,
    judge_count: u32,
    utterances: Vec<UtteranceRecord>,
}

impl Corpus {
    /// Validates invariants and sorts utterances by id.
    pub fn new(
        split_tag: SplitTag,
        judge_count: u32,
        mut utterances: Vec<UtteranceRecord>,
    ) -> Result<Self> {
        if judge_count == 0 {
            return Err(Error::invalid("judge_count must be at least 1"));
        }
        utterances.sort_by(|a, b| a.utterance_id.cmp(&b.utterance_id));
        for pair in utterances.windows(2) {
            if pair[0].utterance_id == pair[1].utterance_id {
                return Err(Error::invalid(format!(
                    "duplicate utterance_id '{}'",
                    pair[0].utterance_id
                )));
            }
        }
        for u in &utterances {
            if u.ratings.is_empty() && split_tag != SplitTag::Unlabeled {
                return Err(Error::invalid(format!(
                    "utterance '{}' has no ratings but split is {}",
                    u.utterance_id,
                    split_tag.as_str()
                )));
            }
            for r in &u.ratings {
                if r.judge_id > judge_count {
                    return Err(Error::invalid(format!(
                        "utterance '{}' rated by judge {} but the pool has {judge_count}",
                        u.utterance_id, r.judge_id
                    )));
                }
            }
        }
        Ok(Corpus { split_tag, judge_count, utterances })
    }

    pub fn split_tag(&self) -> SplitTag {
        self.split_tag
    }

    /// Size N of the judge pool (embedding rows are N + 1 including judge 0).
    pub fn judge_count(&self) -> u32 {
        self.judge_count
    }

    /// Utterances in deterministic order (sorted by utterance_id).
    pub fn utterances(&self) -> &[UtteranceRecord] {
        &self.utterances
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    /// Rebuilds with a different tag (used when assembling splits).
    pub fn with_tag(&self, tag: SplitTag) -> Result<Corpus> {
        Corpus::new(tag, self.judge_count, self.utterances.clone())
    }
}

/// Largest-remainder rounding of `n` into shares proportional to `ratios`.
fn rounded_shares(n: usize, ratios: &[f64; 3]) -> [usize; 3] {
    let mut floors = [0usize; 3];
    let mut fracs = [(0.0f64, 0usize); 3];
    let mut assigned = 0usize;
    for i in 0..3 {
        let exact = n as f64 * ratios[i];
        let fl = libm::floor(exact);
        floors[i] = fl as usize;
        fracs[i] = (exact - fl, i);
        assigned += floors[i];
    }
    // Hand out the remainder to the largest fractional parts; ties go to
    // the earlier split so the result is deterministic.
    fracs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let mut remainder = n - assigned;
    let mut k = 0usize;
    while remainder > 0 {
        floors[fracs[k % 3].1] += 1;
        remainder -= 1;
        k += 1;
    }
    floors
}

/// Seeded three-way partition into train/dev/test with rounded shares.
pub fn split_corpus(
    corpus: &Corpus,
    ratios: [f64; 3],
    seed: u64,
) -> Result<(Corpus, Corpus, Corpus)> {
    for &r in &ratios {
        if !(r >= 0.0) || !r.is_finite() {
            return Err(Error::invalid(format!("split ratio {r} must be non-negative")));
        }
    }
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("split ratios sum to {sum}, expected 1")));
    }

    let shares = rounded_shares(corpus.len(), &ratios);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    use rand::seq::SliceRandom;
    let mut rng = substream(seed, tag::SPLIT, 0);
    order.shuffle(&mut rng);

    let mut parts: [Vec<UtteranceRecord>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    let mut cursor = 0usize;
    for (part, &share) in parts.iter_mut().zip(&shares) {
        for &idx in &order[cursor..cursor + share] {
            part.push(corpus.utterances[idx].clone());
        }
        cursor += share;
    }
    let [train, dev, test] = parts;
    Ok((
        Corpus::new(SplitTag::Train, corpus.judge_count, train)?,
        Corpus::new(SplitTag::Dev, corpus.judge_count, dev)?,
        Corpus::new(SplitTag::Test, corpus.judge_count, test)?,
    ))
}

/// Feature sequence: `T x D` frames of finite 32-bit reals, `T >= 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    frames: Tensor,
}

impl FeatureSequence {
    pub fn new(t_len: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if t_len == 0 || dim == 0 {
            return Err(Error::invalid(format!(
                "feature sequence needs T >= 1 and D >= 1, got {t_len}x{dim}"
            )));
        }
        let frames = Tensor::from_vec(&[t_len, dim], data)?;
        if !frames.all_finite() {
            return Err(Error::NonFinite("feature sequence contains non-finite values".into()));
        }
        Ok(FeatureSequence { frames })
    }

    pub fn from_tensor(frames: Tensor) -> Result<Self> {
        if frames.shape().len() != 2 {
            return Err(Error::shape(format!(
                "feature sequence must be 2-D, got {:?}",
                frames.shape()
            )));
        }
        FeatureSequence::new(frames.shape()[0], frames.shape()[1], frames.data().to_vec())
    }

    pub fn frames(&self) -> &Tensor {
        &self.frames
    }

    pub fn t_len(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.frames.shape()[1]
    }

    pub fn data(&self) -> &[f32] {
        self.frames.data()
    }
}

/// In-memory resolution of `feature_ref` keys to feature sequences.
#[derive(Debug, Clone, Default)]
pub struct FeatureStore {
    map: BTreeMap<String, FeatureSequence>,
}

impl FeatureStore {
    pub fn new() -> Self {
        FeatureStore::default()
    }

    /// Inserting an existing key is an error: silent replacement would let
    /// an augmentation suffix collide with a real utterance unnoticed.
    pub fn insert(&mut self, key: impl Into<String>, seq: FeatureSequence) -> Result<()> {
        let key = key.into();
        if self.map.contains_key(&key) {
            return Err(Error::invalid(format!("feature key '{key}' already present")));
        }
        self.map.insert(key, seq);
        Ok(())
    }

    pub fn get(&self, key: &str) -> Result<&FeatureSequence> {
        self.map
            .get(key)
            .ok_or_else(|| Error::MissingFeatures(format!("no features stored for '{key}'")))
    }

    pub fn contains(&self, key: &str) -> bool {
        self.map.contains_key(key)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    /// Shared feature dimension, or an error if stores disagree.
    pub fn common_dim(&self) -> Result<usize> {
        let mut dim = None;
        for (key, seq) in &self.map {
            match dim {
                None => dim = Some(seq.dim()),
                Some(d) if d != seq.dim() => {
                    return Err(Error::shape(format!(
                        "feature '{key}' has dim {} but the store uses {d}",
                        seq.dim()
                    )));
                }
                _ => {}
            }
        }
        dim.ok_or_else(|| Error::invalid("feature store is empty"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;
    use rand::Rng;

    fn ratings(scores: &[u8]) -> Vec<Rating> {
        scores
            .iter()
            .enumerate()
            .map(|(i, &s)| Rating::new("u1", "sysA", i as u32 + 1, s).unwrap())
            .collect()
    }

    #[test]
    fn mos_matches_hand_means() {
        assert_eq!(compute_mos(&ratings(&[3, 3, 4, 5])).unwrap(), 3.75);
        assert_eq!(compute_mos(&ratings(&[5])).unwrap(), 5.0);
        assert_eq!(compute_mos(&ratings(&[1, 1, 1, 1, 1])).unwrap(), 1.0);
        assert!(compute_mos(&[]).is_err());
    }

    #[test]
    fn distribution_matches_hand_counts() {
        let p = empirical_distribution(&ratings(&[3, 3, 4, 5])).unwrap();
        assert_eq!(p, [0.0, 0.0, 0.5, 0.25, 0.25]);
        let one_hot = empirical_distribution(&ratings(&[5])).unwrap();
        assert_eq!(one_hot, [0.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn distribution_recovers_integer_counts() {
        // Histogram oracle: counting independently of the implementation,
        // p_c * K must reproduce the integer counts exactly. Exact float
        // recovery of n/K * K holds for K <= 21, so draw K in 1..=20.
        let mut rng = substream(42, tag::UTTERANCE, 0);
        for _ in 0..1000 {
            let k = rng.gen_range(1..=20usize);
            let scores: Vec<u8> = (0..k).map(|_| rng.gen_range(1..=5u8)).collect();
            let mut oracle = [0u32; 5];
            for &s in &scores {
                oracle[(s - 1) as usize] += 1;
            }
            let p = empirical_distribution(&ratings(&scores)).unwrap();
            let sum: f64 = p.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            for c in 0..5 {
                assert_eq!(p[c] * k as f64, oracle[c] as f64, "k={k} c={c}");
            }
        }
    }

    #[test]
    fn mos_is_the_distribution_expectation_and_close_to_the_integer_mean() {
        let mut rng = substream(43, tag::UTTERANCE, 1);
        for _ in 0..1000 {
            let k = rng.gen_range(1..=50usize);
            let scores: Vec<u8> = (0..k).map(|_| rng.gen_range(1..=5u8)).collect();
            let rs = ratings(&scores);
            let mos = compute_mos(&rs).unwrap();
            let via_dist = expectation(&empirical_distribution(&rs).unwrap());
            assert_eq!(mos.to_bits(), via_dist.to_bits());
            let int_mean = scores.iter().map(|&s| s as f64).sum::<f64>() / k as f64;
            assert!((mos - int_mean).abs() < 1e-12, "{mos} vs {int_mean}");
            assert!((1.0..=5.0).contains(&mos));
        }
    }

    #[test]
    fn rating_and_record_invariants_are_enforced() {
        assert!(Rating::new("u", "s", 0, 3).is_err());
        assert!(Rating::new("u", "s", 1, 0).is_err());
        assert!(Rating::new("u", "s", 1, 6).is_err());
        let foreign = vec![Rating::new("other", "s", 1, 3).unwrap()];
        assert!(UtteranceRecord::new("u", "s", "u.feat", foreign).is_err());
        let rec = UtteranceRecord::new("u1", "s", "u1.feat", ratings(&[2, 4])).unwrap();
        assert_eq!(rec.mos, Some(3.0));
    }

    fn record(id: &str, judge: u32) -> UtteranceRecord {
        let r = vec![Rating::new(id, "sys", judge, 3).unwrap()];
        UtteranceRecord::new(id, "sys", format!("{id}.feat"), r).unwrap()
    }

    #[test]
    fn corpus_checks_judges_uniqueness_and_unlabeled_rule() {
        let ok = Corpus::new(SplitTag::Train, 4, vec![record("b", 2), record("a", 4)]).unwrap();
        assert_eq!(ok.utterances()[0].utterance_id, "a");
        assert!(Corpus::new(SplitTag::Train, 3, vec![record("a", 4)]).is_err());
        assert!(Corpus::new(SplitTag::Train, 4, vec![record("a", 1), record("a", 2)]).is_err());

        let bare = UtteranceRecord::new("x", "sys", "x.feat", vec![]).unwrap();
        assert!(Corpus::new(SplitTag::Train, 4, vec![bare.clone()]).is_err());
        assert!(Corpus::new(SplitTag::Unlabeled, 4, vec![bare]).is_ok());
    }

    fn corpus_of(n: usize) -> Corpus {
        let utts = (0..n).map(|i| record(&format!("utt{i:04}"), 1)).collect();
        Corpus::new(SplitTag::Train, 2, utts).unwrap()
    }

    #[test]
    fn split_produces_rounded_shares() {
        let (tr, dv, te) = split_corpus(&corpus_of(100), [0.7, 0.15, 0.15], 9).unwrap();
        assert_eq!((tr.len(), dv.len(), te.len()), (70, 15, 15));
        assert_eq!(tr.split_tag(), SplitTag::Train);
        assert_eq!(dv.split_tag(), SplitTag::Dev);
        assert_eq!(te.split_tag(), SplitTag::Test);

        let (tr, dv, te) = split_corpus(&corpus_of(10), [1.0, 0.0, 0.0], 9).unwrap();
        assert_eq!((tr.len(), dv.len(), te.len()), (10, 0, 0));
    }

    #[test]
    fn split_is_deterministic_and_partitions() {
        let corpus = corpus_of(53);
        let a = split_corpus(&corpus, [0.7, 0.15, 0.15], 5).unwrap();
        let b = split_corpus(&corpus, [0.7, 0.15, 0.15], 5).unwrap();
        assert_eq!(a, b);

        let mut rng = substream(44, tag::SPLIT, 7);
        for trial in 0..50 {
            let r1: f64 = rng.gen_range(0.1..0.8);
            let r2: f64 = rng.gen_range(0.1..(1.0 - r1 - 0.05));
            let ratios = [r1, r2, 1.0 - r1 - r2];
            let (tr, dv, te) = split_corpus(&corpus, ratios, trial).unwrap();
            assert_eq!(tr.len() + dv.len() + te.len(), corpus.len());
            let mut ids: Vec<&str> = tr
                .utterances()
                .iter()
                .chain(dv.utterances())
                .chain(te.utterances())
                .map(|u| u.utterance_id.as_str())
                .collect();
            ids.sort_unstable();
            ids.dedup();
            assert_eq!(ids.len(), corpus.len(), "splits overlap or drop utterances");
        }
    }

    #[test]
    fn split_rejects_bad_ratios() {
        let corpus = corpus_of(10);
        assert!(split_corpus(&corpus, [0.5, 0.4, 0.2], 1).is_err());
        assert!(split_corpus(&corpus, [-0.1, 0.6, 0.5], 1).is_err());
    }

    #[test]
    fn feature_sequence_validates_shape_and_finiteness() {
        assert!(FeatureSequence::new(0, 3, vec![]).is_err());
        assert!(FeatureSequence::new(1, 2, vec![1.0, f32::NAN]).is_err());
        let seq = FeatureSequence::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!((seq.t_len(), seq.dim()), (2, 2));
    }

    #[test]
    fn feature_store_rejects_duplicates_and_reports_missing() {
        let mut store = FeatureStore::new();
        let seq = FeatureSequence::new(1, 2, vec![0.0, 1.0]).unwrap();
        store.insert("a.feat", seq.clone()).unwrap();
        assert!(store.insert("a.feat", seq).is_err());
        assert!(store.get("a.feat").is_ok());
        let err = store.get("b.feat").unwrap_err();
        assert!(err.to_string().contains("b.feat"));
        assert_eq!(store.common_dim().unwrap(), 2);
    }
}
