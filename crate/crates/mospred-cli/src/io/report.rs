//! Run outputs: the flat `key = value` report document, the prediction
//! dump CSV (`utterance_id,system_id,true_mos,pred_mos`), and the
//! training log CSV (`step,lr,train_loss,dev_loss`).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use mospred_core::metrics::{MetricsReport, PredictionRow};
use mospred_core::train::TrainLogRecord;

use crate::{runtime, validation, CliResult};

/// A report is an ordered set of string keys with string values; floats
/// go through `Display` so they parse back to the identical f64.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    entries: BTreeMap<String, String>,
}

impl Report {
    pub fn new() -> Self {
        Report::default()
    }

    pub fn from_metrics(m: &MetricsReport) -> Self {
        let mut r = Report::new();
        r.set_f64("utt.mse", m.utt.mse);
        r.set_f64("utt.lcc", m.utt.lcc);
        r.set_f64("utt.srcc", m.utt.srcc);
        r.set_f64("utt.ktau", m.utt.ktau);
        r.set_f64("sys.mse", m.sys.mse);
        r.set_f64("sys.lcc", m.sys.lcc);
        r.set_f64("sys.srcc", m.sys.srcc);
        r.set_f64("sys.ktau", m.sys.ktau);
        r.set("n_utt", m.n_utt.to_string());
        r.set("n_sys", m.n_sys.to_string());
        r
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(key.to_string(), value.into());
    }

    pub fn set_f64(&mut self, key: &str, value: f64) {
        self.set(key, format!("{value}"));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|s| s.as_str())
    }

    pub fn get_f64(&self, key: &str) -> CliResult<f64> {
        let raw = self
            .get(key)
            .ok_or_else(|| validation(format!("report has no key '{key}'")))?;
        raw.parse::<f64>()
            .map_err(|e| validation(format!("report key '{key}' = '{raw}': {e}")))
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|k| k.as_str())
    }

    pub fn to_string_doc(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(v);
            out.push('\n');
        }
        out
    }
}

pub fn write_report(path: &Path, report: &Report) -> CliResult<()> {
    fs::write(path, report.to_string_doc())
        .map_err(|e| runtime(format!("writing {}: {e}", path.display())))
}

pub fn read_report(path: &Path) -> CliResult<Report> {
    let text = fs::read_to_string(path)
        .map_err(|e| validation(format!("opening {}: {e}", path.display())))?;
    let mut report = Report::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (k, v) = line.split_once(" = ").ok_or_else(|| {
            validation(format!("{} line {}: expected 'key = value'", path.display(), i + 1))
        })?;
        report.set(k.trim(), v.trim().to_string());
    }
    Ok(report)
}

const PREDICTIONS_HEADER: [&str; 4] = ["utterance_id", "system_id", "true_mos", "pred_mos"];

pub fn write_predictions(path: &Path, rows: &[PredictionRow]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| runtime(format!("creating {}: {e}", path.display())))?;
    w.write_record(PREDICTIONS_HEADER).map_err(runtime)?;
    for row in rows {
        w.write_record([
            row.utterance_id.as_str(),
            row.system_id.as_str(),
            &format!("{}", row.true_mos),
            &format!("{}", row.pred_mos),
        ])
        .map_err(runtime)?;
    }
    w.flush().map_err(runtime)?;
    Ok(())
}

pub fn read_predictions(path: &Path) -> CliResult<Vec<PredictionRow>> {
    let mut r = csv::Reader::from_path(path)
        .map_err(|e| validation(format!("opening {}: {e}", path.display())))?;
    let headers = r.headers().map_err(validation)?.clone();
    if headers.iter().collect::<Vec<_>>() != PREDICTIONS_HEADER {
        return Err(validation(format!(
            "{}: expected header {:?}",
            path.display(),
            PREDICTIONS_HEADER.join(",")
        )));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(validation)?;
        if rec.len() != 4 {
            return Err(validation(format!("{} line {line}: expected 4 fields", path.display())));
        }
        let parse = |field: &str, what: &str| -> CliResult<f64> {
            field
                .parse::<f64>()
                .map_err(|e| validation(format!("{} line {line}: bad {what}: {e}", path.display())))
        };
        rows.push(PredictionRow {
            utterance_id: rec[0].to_string(),
            system_id: rec[1].to_string(),
            true_mos: parse(&rec[2], "true_mos")?,
            pred_mos: parse(&rec[3], "pred_mos")?,
        });
    }
    Ok(rows)
}

const TRAIN_LOG_HEADER: [&str; 4] = ["step", "lr", "train_loss", "dev_loss"];

pub fn write_train_log(path: &Path, log: &[TrainLogRecord]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| runtime(format!("creating {}: {e}", path.display())))?;
    w.write_record(TRAIN_LOG_HEADER).map_err(runtime)?;
    for rec in log {
        w.write_record([
            rec.step.to_string(),
            format!("{}", rec.lr),
            format!("{}", rec.train_loss),
            format!("{}", rec.dev_loss),
        ])
        .map_err(runtime)?;
    }
    w.flush().map_err(runtime)?;
    Ok(())
}

pub fn read_train_log(path: &Path) -> CliResult<Vec<TrainLogRecord>> {
    let mut r = csv::Reader::from_path(path)
        .map_err(|e| validation(format!("opening {}: {e}", path.display())))?;
    let headers = r.headers().map_err(validation)?.clone();
    if headers.iter().collect::<Vec<_>>() != TRAIN_LOG_HEADER {
        return Err(validation(format!(
            "{}: expected header {:?}",
            path.display(),
            TRAIN_LOG_HEADER.join(",")
        )));
    }
    let mut log = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(validation)?;
        let bad = |what: &str, e: &dyn std::fmt::Display| {
            validation(format!("{} line {line}: bad {what}: {e}", path.display()))
        };
        log.push(TrainLogRecord {
            step: rec[0].parse().map_err(|e| bad("step", &e))?,
            lr: rec[1].parse().map_err(|e| bad("lr", &e))?,
            train_loss: rec[2].parse().map_err(|e| bad("train_loss", &e))?,
            dev_loss: rec[3].parse().map_err(|e| bad("dev_loss", &e))?,
        });
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use mospred_core::metrics::LevelMetrics;

    #[test]
    fn report_document_is_sorted_and_round_trips() {
        let m = MetricsReport {
            utt: LevelMetrics { mse: 0.25, lcc: 0.5, srcc: 0.625, ktau: 0.4375 },
            sys: LevelMetrics {
                mse: 0.1,
                lcc: 0.9112345678901234,
                srcc: 0.95,
                ktau: 0.875,
            },
            n_utt: 150,
            n_sys: 6,
        };
        let report = Report::from_metrics(&m);
        let doc = report.to_string_doc();
        let keys: Vec<&str> = doc.lines().map(|l| l.split(" = ").next().unwrap()).collect();
        let mut sorted = keys.clone();
        sorted.sort_unstable();
        assert_eq!(keys, sorted);
        assert!(doc.contains("n_utt = 150\n"));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.txt");
        write_report(&path, &report).unwrap();
        let back = read_report(&path).unwrap();
        assert_eq!(back, report);
        // Display -> parse preserves the exact f64.
        assert_eq!(back.get_f64("sys.lcc").unwrap(), 0.9112345678901234);
    }

    #[test]
    fn prediction_dump_round_trips_exactly() {
        let rows = vec![
            PredictionRow {
                utterance_id: "s0_u0".into(),
                system_id: "s0".into(),
                true_mos: 3.625,
                pred_mos: 3.141592653589793,
            },
            PredictionRow {
                utterance_id: "s1_u9".into(),
                system_id: "s1".into(),
                true_mos: 4.0,
                pred_mos: 2.0000000000000004,
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("predictions.csv");
        write_predictions(&path, &rows).unwrap();
        assert_eq!(read_predictions(&path).unwrap(), rows);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("utterance_id,system_id,true_mos,pred_mos\n"));
    }

    #[test]
    fn train_log_round_trips() {
        let log = vec![
            TrainLogRecord { step: 100, lr: 0.0029, train_loss: 1.5, dev_loss: 1.25 },
            TrainLogRecord { step: 200, lr: 0.002, train_loss: 1.125, dev_loss: 1.0625 },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train_log.csv");
        write_train_log(&path, &log).unwrap();
        assert_eq!(read_train_log(&path).unwrap(), log);
    }
}
