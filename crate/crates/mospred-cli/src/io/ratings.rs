//! Ratings CSV (`utterance_id,system_id,judge_id,score`) and the
//! unlabeled variant (`utterance_id,system_id`).

use std::collections::BTreeMap;
use std::path::Path;

use mospred_core::corpus::{Corpus, Rating, SplitTag, UtteranceRecord};

use crate::{runtime, validation, CliResult};

pub const RATINGS_HEADER: [&str; 4] = ["utterance_id", "system_id", "judge_id", "score"];
pub const UTTERANCES_HEADER: [&str; 2] = ["utterance_id", "system_id"];

/// Ids become file names and CSV cells, so they must stay boring.
fn check_id(id: &str, what: &str) -> CliResult<()> {
    let ok = !id.is_empty()
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.' | '~'));
    if ok {
        Ok(())
    } else {
        Err(validation(format!("{what} '{id}' has characters unsuitable for file names")))
    }
}

pub fn write_ratings(path: &Path, corpus: &Corpus) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| runtime(format!("writing {}: {e}", path.display())))?;
    w.write_record(RATINGS_HEADER).map_err(runtime)?;
    for utt in corpus.utterances() {
        for r in &utt.ratings {
            w.write_record([
                r.utterance_id.as_str(),
                r.system_id.as_str(),
                &r.judge_id.to_string(),
                &r.score.to_string(),
            ])
            .map_err(runtime)?;
        }
    }
    w.flush().map_err(runtime)
}

pub fn write_utterances(path: &Path, corpus: &Corpus) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| runtime(format!("writing {}: {e}", path.display())))?;
    w.write_record(UTTERANCES_HEADER).map_err(runtime)?;
    for utt in corpus.utterances() {
        w.write_record([utt.utterance_id.as_str(), utt.system_id.as_str()])
            .map_err(runtime)?;
    }
    w.flush().map_err(runtime)
}

fn open_csv(path: &Path, header: &[&str]) -> CliResult<csv::Reader<std::fs::File>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| validation(format!("opening {}: {e}", path.display())))?;
    let got = reader
        .headers()
        .map_err(|e| validation(format!("{}: {e}", path.display())))?;
    if got.iter().collect::<Vec<_>>() != header {
        return Err(validation(format!(
            "{}: header is {:?}, expected {:?}",
            path.display(),
            got,
            header
        )));
    }
    Ok(reader)
}

/// Reads a ratings CSV into a corpus. The judge pool size is the larger
/// of `min_judge_count` and the highest judge id seen, so corpora rated
/// by a subset of judges still conform to the model's table.
pub fn read_ratings(path: &Path, tag: SplitTag, min_judge_count: u32) -> CliResult<Corpus> {
    let mut reader = open_csv(path, &RATINGS_HEADER)?;
    // Utterance order within the file is preserved per id via BTreeMap.
    let mut by_utt: BTreeMap<String, (String, Vec<Rating>)> = BTreeMap::new();
    let mut judge_count = min_judge_count;
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| validation(format!("{} line {line}: {e}", path.display())))?;
        if row.len() != 4 {
            return Err(validation(format!(
                "{} line {line}: {} fields, expected 4",
                path.display(),
                row.len()
            )));
        }
        let utterance_id = row[0].to_string();
        let system_id = row[1].to_string();
        check_id(&utterance_id, "utterance_id")?;
        check_id(&system_id, "system_id")?;
        let judge_id: u32 = row[2]
            .parse()
            .map_err(|e| validation(format!("{} line {line}: judge_id: {e}", path.display())))?;
        let score: u8 = row[3]
            .parse()
            .map_err(|e| validation(format!("{} line {line}: score: {e}", path.display())))?;
        let rating = Rating::new(utterance_id.clone(), system_id.clone(), judge_id, score)
            .map_err(|e| validation(format!("{} line {line}: {e}", path.display())))?;
        judge_count = judge_count.max(judge_id);
        let entry = by_utt.entry(utterance_id).or_insert_with(|| (system_id.clone(), Vec::new()));
        if entry.0 != system_id {
            return Err(validation(format!(
                "{} line {line}: utterance '{}' listed under two systems",
                path.display(),
                row[0].to_string()
            )));
        }
        entry.1.push(rating);
    }
    let mut utts = Vec::with_capacity(by_utt.len());
    for (utterance_id, (system_id, ratings)) in by_utt {
        // feature_ref convention: the utterance id names its feature file.
        let rec = UtteranceRecord::new(utterance_id.clone(), system_id, utterance_id, ratings)
            .map_err(validation)?;
        utts.push(rec);
    }
    Corpus::new(tag, judge_count, utts).map_err(validation)
}

/// Reads an unlabeled utterance list (no ratings anywhere).
pub fn read_utterances(path: &Path, judge_count: u32) -> CliResult<Corpus> {
    let mut reader = open_csv(path, &UTTERANCES_HEADER)?;
    let mut utts = Vec::new();
    let mut seen = BTreeMap::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| validation(format!("{} line {line}: {e}", path.display())))?;
        let utterance_id = row[0].to_string();
        let system_id = row[1].to_string();
        check_id(&utterance_id, "utterance_id")?;
        check_id(&system_id, "system_id")?;
        if seen.insert(utterance_id.clone(), ()).is_some() {
            return Err(validation(format!(
                "{} line {line}: duplicate utterance '{utterance_id}'",
                path.display()
            )));
        }
        let rec = UtteranceRecord::new(utterance_id.clone(), system_id, utterance_id, Vec::new())
            .map_err(validation)?;
        utts.push(rec);
    }
    Corpus::new(SplitTag::Unlabeled, judge_count, utts).map_err(validation)
}
