//! Checkpoint serialization.
//!
//! Layout: 8-byte magic `BBCKPT1\n`, a little-endian u64 header length, a
//! UTF-8 JSON header mapping parameter names to dtype/shape/offset/length,
//! then a contiguous little-endian f32 payload. Offsets are relative to the
//! payload start.

use crate::error::{Error, Result};
use crate::network::params::{Param, ParameterStore};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"BBCKPT1\n";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct HeaderEntry {
    dtype: String,
    shape: Vec<usize>,
    offset: u64,
    length: u64,
}

/// What `import_checkpoint` matched against the fresh parameters.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LoadReport {
    /// Parameters filled from the checkpoint.
    pub loaded: Vec<String>,
    /// Parameters in the store with no checkpoint entry; they keep their
    /// current (typically freshly initialized) values.
    pub missing: Vec<String>,
    /// Checkpoint entries with no matching parameter name.
    pub unused: Vec<String>,
}

/// Write every parameter to `path` in insertion order.
pub fn export_checkpoint(store: &ParameterStore, path: &Path) -> Result<()> {
    let mut header: IndexMap<String, HeaderEntry> = IndexMap::new();
    let mut offset = 0u64;
    for (name, param) in store.iter() {
        let length = (param.data.len() * 4) as u64;
        header.insert(
            name.to_string(),
            HeaderEntry {
                dtype: "f32".into(),
                shape: param.shape.clone(),
                offset,
                length,
            },
        );
        offset += length;
    }
    let header_bytes = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;

    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(MAGIC)?;
    out.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
    out.write_all(&header_bytes)?;
    for (_, param) in store.iter() {
        for &v in &param.data {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Parse a checkpoint file into a standalone parameter store.
pub fn read_checkpoint(path: &Path) -> Result<ParameterStore> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    reader.read_exact(&mut magic).map_err(|_| {
        Error::Checkpoint(format!("{}: file too short for magic", path.display()))
    })?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{}: bad magic {:?}",
            path.display(),
            magic
        )));
    }
    let mut len_bytes = [0u8; 8];
    reader
        .read_exact(&mut len_bytes)
        .map_err(|_| Error::Checkpoint(format!("{}: truncated header length", path.display())))?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    reader
        .read_exact(&mut header_bytes)
        .map_err(|_| Error::Checkpoint(format!("{}: truncated header", path.display())))?;
    let header: IndexMap<String, HeaderEntry> = serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::Checkpoint(format!("{}: invalid header JSON: {e}", path.display())))?;
    let mut payload = Vec::new();
    reader.read_to_end(&mut payload)?;

    // Reject overlapping or out-of-bounds payload ranges.
    let mut ranges: Vec<(u64, u64, &str)> = header
        .iter()
        .map(|(name, e)| (e.offset, e.offset + e.length, name.as_str()))
        .collect();
    ranges.sort_unstable();
    for window in ranges.windows(2) {
        if window[0].1 > window[1].0 {
            return Err(Error::Checkpoint(format!(
                "entries `{}` and `{}` overlap in the payload",
                window[0].2, window[1].2
            )));
        }
    }

    let mut store = ParameterStore::new();
    for (name, entry) in &header {
        if entry.dtype != "f32" {
            return Err(Error::Checkpoint(format!(
                "`{name}`: unsupported dtype `{}`",
                entry.dtype
            )));
        }
        let scalars: usize = entry.shape.iter().product();
        if entry.length as usize != scalars * 4 {
            return Err(Error::Checkpoint(format!(
                "`{name}`: shape {:?} needs {} bytes, header says {}",
                entry.shape,
                scalars * 4,
                entry.length
            )));
        }
        let start = entry.offset as usize;
        let end = start + entry.length as usize;
        if end > payload.len() {
            return Err(Error::Checkpoint(format!(
                "`{name}`: payload range {start}..{end} exceeds {} bytes",
                payload.len()
            )));
        }
        let data: Vec<f32> = payload[start..end]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        store.insert(name.clone(), Param::new(entry.shape.clone(), data))?;
    }
    Ok(store)
}

/// Load checkpoint values into `store` by name. Unmatched store parameters
/// keep their current values; shape mismatches abort with the offending name.
pub fn import_checkpoint(store: &mut ParameterStore, path: &Path) -> Result<LoadReport> {
    let loaded_store = read_checkpoint(path)?;
    let mut report = LoadReport::default();
    let names: Vec<String> = store.names().map(|s| s.to_string()).collect();
    for name in &names {
        match loaded_store.get(name) {
            Some(src) => {
                let dst = store.get_mut(name).unwrap();
                if src.shape != dst.shape {
                    return Err(Error::ShapeMismatch {
                        name: name.clone(),
                        expected: dst.shape.clone(),
                        actual: src.shape.clone(),
                    });
                }
                dst.data.copy_from_slice(&src.data);
                report.loaded.push(name.clone());
            }
            None => report.missing.push(name.clone()),
        }
    }
    for name in loaded_store.names() {
        if store.get(name).is_none() {
            report.unused.push(name.to_string());
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::model::{build_network, NetworkConfig};

    fn tiny_store(seed: u64) -> ParameterStore {
        build_network(&NetworkConfig::tiny(32, 8), seed).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let store = tiny_store(5);
        export_checkpoint(&store, &path).unwrap();
        let loaded = read_checkpoint(&path).unwrap();
        assert_eq!(store, loaded);
    }

    #[test]
    fn magic_is_first_eight_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        export_checkpoint(&tiny_store(0), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..8], b"BBCKPT1\n");
    }

    #[test]
    fn import_fills_matches_and_reports_the_rest() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let source = tiny_store(10);
        export_checkpoint(&source, &path).unwrap();

        let mut target = tiny_store(11);
        // Drop one parameter from the target so the checkpoint has an
        // unused entry, and add one extra so the target has a miss.
        let mut pruned = ParameterStore::new();
        for (name, param) in target.iter() {
            if name != "subnet.out.bias" {
                pruned.insert(name, param.clone()).unwrap();
            }
        }
        pruned
            .insert("extra.weight", Param::zeros(vec![2, 2, 1, 1]))
            .unwrap();
        target = pruned;

        let report = import_checkpoint(&mut target, &path).unwrap();
        assert_eq!(report.missing, vec!["extra.weight".to_string()]);
        assert_eq!(report.unused, vec!["subnet.out.bias".to_string()]);
        assert_eq!(report.loaded.len(), source.len() - 1);
        for name in &report.loaded {
            assert_eq!(target.get(name).unwrap().data, source.get(name).unwrap().data);
        }
    }

    #[test]
    fn unmatched_parameters_keep_fresh_init() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("partial.ckpt");
        // Checkpoint containing only the stem.
        let source = tiny_store(1);
        let mut stem_only = ParameterStore::new();
        for name in ["backbone.stem.conv.weight", "backbone.stem.conv.bias"] {
            stem_only.insert(name, source.get(name).unwrap().clone()).unwrap();
        }
        export_checkpoint(&stem_only, &path).unwrap();

        let fresh = tiny_store(2);
        let mut target = fresh.clone();
        let report = import_checkpoint(&mut target, &path).unwrap();
        assert_eq!(report.loaded.len(), 2);
        assert_eq!(
            target.get("backbone.stem.conv.weight").unwrap().data,
            source.get("backbone.stem.conv.weight").unwrap().data
        );
        assert_eq!(
            target.get("subnet.out.weight").unwrap().data,
            fresh.get("subnet.out.weight").unwrap().data
        );
    }

    #[test]
    fn shape_mismatch_names_the_parameter() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        let mut source = ParameterStore::new();
        source
            .insert("subnet.out.bias", Param::zeros(vec![7]))
            .unwrap();
        export_checkpoint(&source, &path).unwrap();
        let mut target = tiny_store(0);
        let err = import_checkpoint(&mut target, &path).unwrap_err();
        match err {
            Error::ShapeMismatch { name, expected, actual } => {
                assert_eq!(name, "subnet.out.bias");
                assert_eq!(expected, vec![4]);
                assert_eq!(actual, vec![7]);
            }
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }

    #[test]
    fn corrupt_files_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let bad_magic = dir.path().join("bad_magic.ckpt");
        std::fs::write(&bad_magic, b"NOTCKPT\n\0\0\0\0\0\0\0\0").unwrap();
        assert!(matches!(read_checkpoint(&bad_magic), Err(Error::Checkpoint(_))));

        let truncated = dir.path().join("short.ckpt");
        std::fs::write(&truncated, b"BBCK").unwrap();
        assert!(read_checkpoint(&truncated).is_err());

        let path = dir.path().join("overlap.ckpt");
        let header = r#"{"a":{"dtype":"f32","shape":[2],"offset":0,"length":8},"b":{"dtype":"f32","shape":[2],"offset":4,"length":8}}"#;
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"BBCKPT1\n");
        bytes.extend_from_slice(&(header.len() as u64).to_le_bytes());
        bytes.extend_from_slice(header.as_bytes());
        bytes.extend_from_slice(&[0u8; 12]);
        std::fs::write(&path, bytes).unwrap();
        let err = read_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("overlap"), "{err}");
    }
}
