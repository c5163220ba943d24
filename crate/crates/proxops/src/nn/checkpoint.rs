//! Versioned binary checkpoints: a JSON spec header plus the little-endian
//! parameter blob. The surrogate and the policy both load through this.

use std::io::{Read, Write};
use std::path::Path;

use super::params::ParamStore;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"PXNN";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    /// Model kind tag, e.g. "surrogate" or "policy".
    pub kind: String,
    /// Model-specific spec (architecture, normalization, scales).
    pub spec: serde_json::Value,
    pub params: Vec<f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint: {0}")]
    Format(String),
    #[error("spec error: {0}")]
    Spec(#[from] serde_json::Error),
}

pub fn save_checkpoint<W: Write>(
    w: &mut W,
    kind: &str,
    spec: &serde_json::Value,
    store: &ParamStore,
) -> Result<(), CheckpointError> {
    let spec_bytes = serde_json::to_vec(spec)?;
    w.write_all(&CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(kind.len() as u32).to_le_bytes())?;
    w.write_all(kind.as_bytes())?;
    w.write_all(&(spec_bytes.len() as u32).to_le_bytes())?;
    w.write_all(&spec_bytes)?;
    w.write_all(&(store.values.len() as u64).to_le_bytes())?;
    for v in &store.values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn load_checkpoint<R: Read>(r: &mut R) -> Result<Checkpoint, CheckpointError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(CheckpointError::Format("bad magic".into()));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Format(format!(
            "unsupported version {version}"
        )));
    }
    r.read_exact(&mut u32buf)?;
    let kind_len = u32::from_le_bytes(u32buf) as usize;
    let mut kind_bytes = vec![0u8; kind_len];
    r.read_exact(&mut kind_bytes)?;
    let kind = String::from_utf8(kind_bytes)
        .map_err(|_| CheckpointError::Format("kind is not utf-8".into()))?;
    r.read_exact(&mut u32buf)?;
    let spec_len = u32::from_le_bytes(u32buf) as usize;
    let mut spec_bytes = vec![0u8; spec_len];
    r.read_exact(&mut spec_bytes)?;
    let spec: serde_json::Value = serde_json::from_slice(&spec_bytes)?;
    let mut u64buf = [0u8; 8];
    r.read_exact(&mut u64buf)?;
    let n = u64::from_le_bytes(u64buf) as usize;
    let mut buf = vec![0u8; 8 * n];
    r.read_exact(&mut buf)?;
    let params = buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Checkpoint { kind, spec, params })
}

pub fn save_checkpoint_path(
    path: &Path,
    kind: &str,
    spec: &serde_json::Value,
    store: &ParamStore,
) -> Result<(), CheckpointError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    save_checkpoint(&mut f, kind, spec, store)
}

pub fn load_checkpoint_path(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    load_checkpoint(&mut f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_parameters_bit_exactly() {
        let mut store = ParamStore::new();
        let r = store.alloc(5);
        r.slice_mut(&mut store.values)
            .copy_from_slice(&[1.5e-300, -0.0, 3.25, f64::MIN_POSITIVE, 1.0 / 3.0]);
        let spec = serde_json::json!({"hidden": [4, 5], "scale": 2.5});

        let mut buf = Vec::new();
        save_checkpoint(&mut buf, "toy", &spec, &store).unwrap();
        let ck = load_checkpoint(&mut buf.as_slice()).unwrap();
        assert_eq!(ck.kind, "toy");
        assert_eq!(ck.spec, spec);
        assert_eq!(ck.params.len(), 5);
        for (a, b) in ck.params.iter().zip(store.values.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn bad_magic_is_rejected() {
        let buf = b"NOPE....".to_vec();
        assert!(matches!(
            load_checkpoint(&mut buf.as_slice()),
            Err(CheckpointError::Format(_))
        ));
    }
}
