//! Binary parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes  "CLMNCKPT"
//! version      u32
//! count        u64
//! per parameter, in name order:
//!   name_len   u32, then name_len bytes of UTF-8
//!   rank       u32
//!   dims       rank × u64
//!   values     Π dims × f32
//! crc32        u32 over every preceding byte
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use super::params::ParameterStore;
use super::tensor::{Real, Tensor};
use super::AutodiffError;

pub const MAGIC: &[u8; 8] = b"CLMNCKPT";
pub const FORMAT_VERSION: u32 = 1;

/// How a checkpoint is matched against an existing store.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoadMode {
    /// Names and shapes must match exactly in both directions.
    Strict,
    /// Only names present on both sides are overwritten; shapes must agree.
    Partial,
}

pub fn encode_checkpoint<T: Real>(store: &ParameterStore<T>) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(store.len() as u64).to_le_bytes());
    for (name, t) in store.iter() {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.values() {
            buf.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], AutodiffError> {
        if self.bytes.len() - self.pos < n {
            return Err(AutodiffError::Checkpoint(format!(
                "truncated checkpoint: wanted {n} bytes at offset {}",
                self.pos
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, AutodiffError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, AutodiffError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Parses checkpoint bytes into named tensors.
pub fn decode_checkpoint<T: Real>(
    bytes: &[u8],
) -> Result<BTreeMap<String, Tensor<T>>, AutodiffError> {
    if bytes.len() < MAGIC.len() + 4 + 8 + 4 {
        return Err(AutodiffError::Checkpoint(
            "truncated checkpoint header".into(),
        ));
    }
    if &bytes[..8] != MAGIC {
        return Err(AutodiffError::Checkpoint(
            "not a checkpoint file (bad magic)".into(),
        ));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let mut r = Reader {
        bytes: body,
        pos: 8,
    };
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(AutodiffError::Checkpoint(format!(
            "unsupported checkpoint version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    if crc32fast::hash(body) != stored {
        return Err(AutodiffError::Checkpoint(
            "checksum mismatch (file truncated or corrupted)".into(),
        ));
    }
    let count = r.u64()?;
    let mut out = BTreeMap::new();
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| AutodiffError::Checkpoint("parameter name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64()? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(4).ok_or_else(|| {
            AutodiffError::Checkpoint(format!("{name}: shape {shape:?} overflows"))
        })?)?;
        let values = raw
            .chunks_exact(4)
            .map(|c| T::lit(f64::from(f32::from_le_bytes(c.try_into().unwrap()))))
            .collect();
        let t = Tensor::new(shape, values)
            .map_err(|e| AutodiffError::Checkpoint(format!("{name}: {e}")))?;
        if out.insert(name.clone(), t).is_some() {
            return Err(AutodiffError::Checkpoint(format!(
                "duplicate parameter {name}"
            )));
        }
    }
    if r.pos != body.len() {
        return Err(AutodiffError::Checkpoint(
            "trailing bytes after last parameter".into(),
        ));
    }
    Ok(out)
}

/// Writes the checkpoint atomically (temp file in the same directory, then rename).
pub fn save_checkpoint<T: Real>(
    store: &ParameterStore<T>,
    path: &Path,
) -> Result<(), AutodiffError> {
    crate::io::write_atomic(path, &encode_checkpoint(store)).map_err(AutodiffError::Io)
}

pub fn read_checkpoint<T: Real>(path: &Path) -> Result<BTreeMap<String, Tensor<T>>, AutodiffError> {
    let bytes = std::fs::read(path).map_err(AutodiffError::Io)?;
    decode_checkpoint(&bytes)
}

/// Loads a checkpoint as a fresh store.
pub fn load_store<T: Real>(path: &Path, seed: u64) -> Result<ParameterStore<T>, AutodiffError> {
    let mut store = ParameterStore::new(seed);
    for (name, t) in read_checkpoint(path)? {
        store.insert(name, t)?;
    }
    Ok(store)
}

/// Overwrites parameters of `store` from the checkpoint at `path`.
///
/// Returns the names that were written.
pub fn load_checkpoint<T: Real>(
    store: &mut ParameterStore<T>,
    path: &Path,
    mode: LoadMode,
) -> Result<Vec<String>, AutodiffError> {
    apply_checkpoint(store, read_checkpoint(path)?, mode)
}

pub fn apply_checkpoint<T: Real>(
    store: &mut ParameterStore<T>,
    loaded: BTreeMap<String, Tensor<T>>,
    mode: LoadMode,
) -> Result<Vec<String>, AutodiffError> {
    if mode == LoadMode::Strict {
        let missing: Vec<&str> = store.names().filter(|n| !loaded.contains_key(*n)).collect();
        if !missing.is_empty() {
            return Err(AutodiffError::Checkpoint(format!(
                "checkpoint is missing parameters: {}",
                missing.join(", ")
            )));
        }
        let extra: Vec<&str> = loaded
            .keys()
            .map(String::as_str)
            .filter(|n| !store.contains(n))
            .collect();
        if !extra.is_empty() {
            return Err(AutodiffError::Checkpoint(format!(
                "checkpoint has unexpected parameters: {}",
                extra.join(", ")
            )));
        }
    }
    let mut mismatched = Vec::new();
    for (name, t) in &loaded {
        if let Some(existing) = store.get(name) {
            if existing.shape() != t.shape() {
                mismatched.push(format!(
                    "{name} (model {:?}, file {:?})",
                    existing.shape(),
                    t.shape()
                ));
            }
        }
    }
    if !mismatched.is_empty() {
        return Err(AutodiffError::Checkpoint(format!(
            "shape mismatch: {}",
            mismatched.join(", ")
        )));
    }
    let mut written = Vec::new();
    for (name, t) in loaded {
        if store.contains(&name) {
            store.set(&name, t)?;
            written.push(name);
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_store() -> ParameterStore<f32> {
        let mut s = ParameterStore::new(1);
        s.insert_uniform("code.embed", vec![5, 3], 0.5).unwrap();
        s.insert_uniform("code.gcn.0.b", vec![4], 0.5).unwrap();
        s.insert_uniform("fusion.w", vec![2, 6], 0.5).unwrap();
        s
    }

    #[test]
    fn save_then_load_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let s = sample_store();
        save_checkpoint(&s, &path).unwrap();
        let loaded: ParameterStore<f32> = load_store(&path, 1).unwrap();
        assert_eq!(loaded, s);
    }

    #[test]
    fn strict_load_reports_missing_names() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mut partial = sample_store();
        partial.remove("fusion.w");
        save_checkpoint(&partial, &path).unwrap();
        let mut target = sample_store();
        let err = load_checkpoint(&mut target, &path, LoadMode::Strict).unwrap_err();
        assert!(err.to_string().contains("fusion.w"), "{err}");
    }

    #[test]
    fn partial_load_only_touches_matching_names() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("code.ckpt");
        let mut code_only = ParameterStore::<f32>::new(99);
        code_only
            .insert_uniform("code.embed", vec![5, 3], 0.5)
            .unwrap();
        code_only
            .insert_uniform("code.gcn.0.b", vec![4], 0.5)
            .unwrap();
        save_checkpoint(&code_only, &path).unwrap();

        let mut full = sample_store();
        let untouched_before = full.get("fusion.w").unwrap().clone();
        let written = load_checkpoint(&mut full, &path, LoadMode::Partial).unwrap();
        assert_eq!(written, ["code.embed", "code.gcn.0.b"]);
        assert_eq!(full.get("fusion.w").unwrap(), &untouched_before);
        assert_eq!(full.get("code.embed"), code_only.get("code.embed"));
    }

    #[test]
    fn shape_mismatch_is_descriptive() {
        let mut other = ParameterStore::<f32>::new(0);
        other.insert_uniform("code.embed", vec![6, 3], 0.5).unwrap();
        let bytes = encode_checkpoint(&other);
        let mut target = sample_store();
        let err = apply_checkpoint(
            &mut target,
            decode_checkpoint(&bytes).unwrap(),
            LoadMode::Partial,
        )
        .unwrap_err();
        assert!(err.to_string().contains("code.embed"), "{err}");
    }

    #[test]
    fn corrupted_and_truncated_files_are_rejected() {
        let bytes = encode_checkpoint(&sample_store());
        assert!(decode_checkpoint::<f32>(&bytes[..bytes.len() - 9]).is_err());
        let mut flipped = bytes.clone();
        flipped[30] ^= 0xff;
        assert!(decode_checkpoint::<f32>(&flipped).is_err());
        let mut versioned = bytes.clone();
        versioned[8] = 7;
        let err = decode_checkpoint::<f32>(&versioned).unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");
    }
}
