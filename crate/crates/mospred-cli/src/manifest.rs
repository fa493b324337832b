//! Run manifests: the effective config snapshot, the seed, and a
//! content hash of every input the command read. Reruns with the same
//! config and inputs produce byte-identical manifests — there are no
//! timestamps or host details in here on purpose.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::config::PipelineConfig;
use crate::io::report::{write_report, Report};
use crate::{runtime, validation, CliResult};

pub fn hash_file(path: &Path) -> CliResult<String> {
    let bytes =
        std::fs::read(path).map_err(|e| validation(format!("hashing {}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<String>) -> CliResult<()> {
    let entries = std::fs::read_dir(dir)
        .map_err(|e| validation(format!("reading {}: {e}", dir.display())))?;
    let mut paths: Vec<_> = entries
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()
        .map_err(|e| validation(format!("reading {}: {e}", dir.display())))?;
    paths.sort();
    for path in paths {
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            let rel = path
                .strip_prefix(root)
                .map_err(|e| runtime(format!("path {}: {e}", path.display())))?;
            let rel = rel
                .to_str()
                .ok_or_else(|| validation(format!("non-UTF-8 path {}", path.display())))?
                .replace('\\', "/");
            out.push(format!("{rel}:{}", hash_file(&path)?));
        }
    }
    Ok(())
}

/// Directory hash: sha256 over sorted `relative/path:file-hash` lines,
/// so it pins both the tree layout and every file's bytes.
pub fn hash_dir(path: &Path) -> CliResult<String> {
    let mut lines = Vec::new();
    collect_files(path, path, &mut lines)?;
    let mut hasher = Sha256::new();
    for line in lines {
        hasher.update(line.as_bytes());
        hasher.update(b"\n");
    }
    Ok(hex::encode(hasher.finalize()))
}

pub fn hash_path(path: &Path) -> CliResult<String> {
    if path.is_dir() {
        hash_dir(path)
    } else {
        hash_file(path)
    }
}

pub struct ManifestBuilder {
    report: Report,
}

impl ManifestBuilder {
    pub fn new(command: &str, config: &PipelineConfig) -> Self {
        let mut report = Report::new();
        report.set("command", command);
        for (k, v) in config.snapshot() {
            report.set(&format!("config.{k}"), v);
        }
        ManifestBuilder { report }
    }

    /// Records one input's path and content hash.
    pub fn input(&mut self, label: &str, path: &Path) -> CliResult<()> {
        self.report.set(&format!("input.{label}.path"), path.display().to_string());
        self.report.set(&format!("input.{label}.sha256"), hash_path(path)?);
        Ok(())
    }

    /// Writes `<out_dir>/manifest.<command>.txt`.
    pub fn write(&self, out_dir: &Path) -> CliResult<()> {
        let command = self.report.get("command").unwrap_or("run").replace('/', "_");
        write_report(&out_dir.join(format!("manifest.{command}.txt")), &self.report)
    }
}
