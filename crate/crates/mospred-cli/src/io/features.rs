//! Binary feature-sequence files: magic "DDFS", u32 frame count T, u32
//! channel count D, then T*D little-endian f32 values in time-major order.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use mospred_core::corpus::{FeatureSequence, FeatureStore};

use crate::{runtime, validation, CliResult};

const MAGIC: &[u8; 4] = b"DDFS";
pub const FEATURE_EXT: &str = "ddfs";

pub fn write_features(path: &Path, seq: &FeatureSequence) -> CliResult<()> {
    let mut buf = Vec::with_capacity(12 + seq.frames().len() * 4);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(seq.t_len() as u32).to_le_bytes());
    buf.extend_from_slice(&(seq.dim() as u32).to_le_bytes());
    for &v in seq.frames().data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| runtime(format!("writing {}: {e}", path.display())))
}

pub fn read_features(path: &Path) -> CliResult<FeatureSequence> {
    let mut file = fs::File::open(path)
        .map_err(|e| validation(format!("opening {}: {e}", path.display())))?;
    let mut header = [0u8; 12];
    file.read_exact(&mut header)
        .map_err(|e| validation(format!("reading {}: {e}", path.display())))?;
    if &header[0..4] != MAGIC {
        return Err(validation(format!("{} is not a feature file", path.display())));
    }
    let t = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let mut payload = Vec::new();
    file.read_to_end(&mut payload)
        .map_err(|e| validation(format!("reading {}: {e}", path.display())))?;
    if payload.len() != t * d * 4 {
        return Err(validation(format!(
            "{}: payload is {} bytes, {}x{} frames need {}",
            path.display(),
            payload.len(),
            t,
            d,
            t * d * 4
        )));
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    FeatureSequence::new(t, d, data)
        .map_err(|e| validation(format!("{}: {e}", path.display())))
}

/// Feature file path for one utterance id inside a corpus directory.
pub fn feature_path(features_dir: &Path, utterance_id: &str) -> PathBuf {
    features_dir.join(format!("{utterance_id}.{FEATURE_EXT}"))
}

/// Writes every sequence in the store as `<features_dir>/<key>.ddfs`.
pub fn save_store(features_dir: &Path, store: &FeatureStore) -> CliResult<()> {
    fs::create_dir_all(features_dir)
        .map_err(|e| runtime(format!("creating {}: {e}", features_dir.display())))?;
    for key in store.keys() {
        let seq = store.get(key).map_err(runtime)?;
        write_features(&feature_path(features_dir, key), seq)?;
    }
    Ok(())
}

/// Loads the named sequences from a features directory.
pub fn load_store<'a>(
    features_dir: &Path,
    keys: impl IntoIterator<Item = &'a str>,
) -> CliResult<FeatureStore> {
    let mut store = FeatureStore::new();
    for key in keys {
        let seq = read_features(&feature_path(features_dir, key))?;
        store.insert(key, seq).map_err(validation)?;
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use mospred_core::corpus::FeatureSequence;

    #[test]
    fn features_round_trip_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("u1.ddfs");
        let seq = FeatureSequence::new(3, 2, vec![0.5, -1.25, 3.75, 0.0, 1e-20, 42.0]).unwrap();
        write_features(&path, &seq).unwrap();
        let back = read_features(&path).unwrap();
        assert_eq!(back.frames(), seq.frames());

        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[0..4], b"DDFS");
        assert_eq!(bytes.len(), 12 + 6 * 4);
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ddfs");

        std::fs::write(&path, b"NOPE").unwrap();
        assert!(read_features(&path).is_err());

        // Truncated payload.
        let mut buf = Vec::new();
        buf.extend_from_slice(b"DDFS");
        buf.extend_from_slice(&5u32.to_le_bytes());
        buf.extend_from_slice(&4u32.to_le_bytes());
        buf.extend_from_slice(&[0u8; 8]);
        std::fs::write(&path, buf).unwrap();
        let err = read_features(&path).unwrap_err();
        assert!(err.to_string().contains("payload"), "{err}");
    }

    #[test]
    fn store_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = FeatureStore::new();
        store
            .insert("a", FeatureSequence::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap())
            .unwrap();
        store
            .insert("b~speed0.9", FeatureSequence::new(1, 2, vec![9.0, 8.0]).unwrap())
            .unwrap();
        save_store(dir.path(), &store).unwrap();
        let back = load_store(dir.path(), ["a", "b~speed0.9"]).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(
            back.get("b~speed0.9").unwrap().frames(),
            store.get("b~speed0.9").unwrap().frames()
        );
        assert!(load_store(dir.path(), ["missing"]).is_err());
    }
}
