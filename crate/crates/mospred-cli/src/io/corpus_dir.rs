//! On-disk corpus layout: a directory holding `ratings.csv` (rated) or
//! `utterances.csv` (unlabeled), a `features/` subdirectory of binary
//! feature files, and optionally the `latent.csv` ground-truth sidecar.

use std::path::{Path, PathBuf};

use mospred_core::corpus::{Corpus, FeatureStore, SplitTag};
use mospred_core::simulate::LatentEntry;

use crate::io::{features, latent, ratings};
use crate::{runtime, validation, CliResult};

pub const RATINGS_FILE: &str = "ratings.csv";
pub const UTTERANCES_FILE: &str = "utterances.csv";
pub const LATENT_FILE: &str = "latent.csv";
pub const FEATURES_DIR: &str = "features";

pub fn features_dir(dir: &Path) -> PathBuf {
    dir.join(FEATURES_DIR)
}

/// Writes the corpus, the feature files it references, and (if given)
/// the latent sidecar. Unlabeled corpora get `utterances.csv`; anything
/// with ratings gets `ratings.csv`.
pub fn save_corpus(
    dir: &Path,
    corpus: &Corpus,
    store: &FeatureStore,
    latent_entries: Option<&[LatentEntry]>,
) -> CliResult<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| runtime(format!("creating {}: {e}", dir.display())))?;
    if corpus.split_tag() == SplitTag::Unlabeled {
        ratings::write_utterances(&dir.join(UTTERANCES_FILE), corpus)?;
    } else {
        ratings::write_ratings(&dir.join(RATINGS_FILE), corpus)?;
    }

    features::save_store(&features_dir(dir), store)?;

    if let Some(entries) = latent_entries {
        latent::write_latent(&dir.join(LATENT_FILE), entries)?;
    }
    Ok(())
}

/// Loads a corpus directory back: `ratings.csv` when present, otherwise
/// `utterances.csv`. Feature files are resolved for every utterance the
/// corpus references; a missing one fails the load.
pub fn load_corpus(dir: &Path, min_judge_count: u32) -> CliResult<(Corpus, FeatureStore)> {
    let ratings_path = dir.join(RATINGS_FILE);
    let utterances_path = dir.join(UTTERANCES_FILE);
    let corpus = if ratings_path.is_file() {
        ratings::read_ratings(&ratings_path, SplitTag::Train, min_judge_count)?
    } else if utterances_path.is_file() {
        ratings::read_utterances(&utterances_path, min_judge_count)?
    } else {
        return Err(validation(format!(
            "{} has neither {RATINGS_FILE} nor {UTTERANCES_FILE}",
            dir.display()
        )));
    };
    let keys: Vec<String> =
        corpus.utterances().iter().map(|u| u.feature_ref.clone()).collect();
    let store = features::load_store(&features_dir(dir), keys.iter().map(|k| k.as_str()))?;
    Ok((corpus, store))
}
