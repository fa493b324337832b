//! Ground-truth sidecar: `utterance_id,system_id,q_s,q_u`. Written next
//! to a simulated corpus so evaluations can be sanity-checked against
//! the latent quality, never read by any training path.

use std::path::Path;

use mospred_core::simulate::{LatentEntry, LatentQuality};

use crate::{runtime, validation, CliResult};

const HEADER: [&str; 4] = ["utterance_id", "system_id", "q_s", "q_u"];

pub fn write_latent(path: &Path, entries: &[LatentEntry]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| runtime(format!("creating {}: {e}", path.display())))?;
    w.write_record(HEADER).map_err(runtime)?;
    for e in entries {
        w.write_record([
            e.utterance_id.as_str(),
            e.system_id.as_str(),
            &format!("{}", e.quality.q_s),
            &format!("{}", e.quality.q_u),
        ])
        .map_err(runtime)?;
    }
    w.flush().map_err(runtime)?;
    Ok(())
}

pub fn read_latent(path: &Path) -> CliResult<Vec<LatentEntry>> {
    let mut r = csv::Reader::from_path(path)
        .map_err(|e| validation(format!("opening {}: {e}", path.display())))?;
    let headers = r.headers().map_err(validation)?.clone();
    if headers.iter().collect::<Vec<_>>() != HEADER {
        return Err(validation(format!(
            "{}: expected header {:?}, found {:?}",
            path.display(),
            HEADER.join(","),
            headers
        )));
    }
    let mut entries = Vec::new();
    for (i, row) in r.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(validation)?;
        if row.len() != 4 {
            return Err(validation(format!(
                "{} line {line}: expected 4 fields",
                path.display()
            )));
        }
        let parse = |field: &str, what: &str| -> CliResult<f64> {
            field.parse::<f64>().map_err(|e| {
                validation(format!("{} line {line}: bad {what}: {e}", path.display()))
            })
        };
        entries.push(LatentEntry {
            utterance_id: row[0].to_string(),
            system_id: row[1].to_string(),
            quality: LatentQuality { q_s: parse(&row[2], "q_s")?, q_u: parse(&row[3], "q_u")? },
        });
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("latent.csv");
        let entries = vec![
            LatentEntry {
                utterance_id: "sys0_utt0".into(),
                system_id: "sys0".into(),
                quality: LatentQuality { q_s: 3.25, q_u: 0.125 },
            },
            LatentEntry {
                utterance_id: "sys1_utt0".into(),
                system_id: "sys1".into(),
                quality: LatentQuality { q_s: 1.5, q_u: -0.0625 },
            },
        ];
        write_latent(&path, &entries).unwrap();
        assert_eq!(read_latent(&path).unwrap(), entries);
    }

    #[test]
    fn rejects_wrong_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("latent.csv");
        std::fs::write(&path, "utterance_id,system_id,score\na,b,1\n").unwrap();
        assert!(read_latent(&path).is_err());
    }
}
