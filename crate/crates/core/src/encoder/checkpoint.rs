//! Binary checkpoint format.
//!
//! Layout, all little-endian:
//! magic `SCRCKPT\x01` · version u32 · config (six u32: d_model, n_layers,
//! n_heads, d_ff, max_len, vocab_size; dropout f64; seed u64) · metadata
//! (u32 JSON length + JSON bytes) · tensors in checkpoint order (u64 count
//! + f32 values each) · SHA-256 of everything preceding.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::scalar::{fl, Scalar};

use super::{EncoderConfig, EncoderError, EncoderParams};

const MAGIC: &[u8; 8] = b"SCRCKPT\x01";
const VERSION: u32 = 1;

/// Provenance recorded alongside the weights.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// "rerank" or "dr".
    #[serde(default)]
    pub model: String,
    /// "none" or "early".
    #[serde(default)]
    pub fusion_mode: String,
    #[serde(default)]
    pub fusion_n: usize,
    /// Transcript condition the model was trained on.
    #[serde(default)]
    pub condition: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub best_metric: Option<f64>,
    #[serde(default)]
    pub extra: BTreeMap<String, String>,
}

pub fn save_checkpoint<F: Scalar>(
    params: &EncoderParams<F>,
    meta: &CheckpointMeta,
    path: &Path,
) -> Result<(), EncoderError> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    let c = &params.config;
    for v in [
        c.d_model as u32,
        c.n_layers as u32,
        c.n_heads as u32,
        c.d_ff as u32,
        c.max_len as u32,
        c.vocab_size as u32,
    ] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&c.dropout_rate.to_le_bytes());
    buf.extend_from_slice(&c.seed.to_le_bytes());

    let meta_json =
        serde_json::to_vec(meta).map_err(|e| EncoderError::Checkpoint(e.to_string()))?;
    buf.extend_from_slice(&(meta_json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&meta_json);

    for (_, t) in params.tensors() {
        let flat = t.flat();
        buf.extend_from_slice(&(flat.len() as u64).to_le_bytes());
        for v in flat {
            let f = v.to_f32().unwrap_or(f32::NAN);
            buf.extend_from_slice(&f.to_le_bytes());
        }
    }

    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    let mut file = std::fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

pub fn load_checkpoint<F: Scalar>(
    path: &Path,
) -> Result<(EncoderParams<F>, CheckpointMeta), EncoderError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < MAGIC.len() + 4 + 32 {
        return Err(EncoderError::Checkpoint("file too short".into()));
    }
    let (body, checksum) = bytes.split_at(bytes.len() - 32);
    let digest = Sha256::digest(body);
    if digest.as_slice() != checksum {
        return Err(EncoderError::Checkpoint("checksum mismatch".into()));
    }
    let mut cur = body;
    let mut take = |n: usize| -> Result<&[u8], EncoderError> {
        if cur.len() < n {
            return Err(EncoderError::Checkpoint("truncated checkpoint".into()));
        }
        let (head, tail) = cur.split_at(n);
        cur = tail;
        Ok(head)
    };
    if take(8)? != MAGIC {
        return Err(EncoderError::Checkpoint("bad magic".into()));
    }
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != VERSION {
        return Err(EncoderError::Checkpoint(format!(
            "unsupported version {version}, expected {VERSION}"
        )));
    }
    let mut read_u32 = || -> Result<u32, EncoderError> {
        Ok(u32::from_le_bytes(take(4)?.try_into().unwrap()))
    };
    let d_model = read_u32()? as usize;
    let n_layers = read_u32()? as usize;
    let n_heads = read_u32()? as usize;
    let d_ff = read_u32()? as usize;
    let max_len = read_u32()? as usize;
    let vocab_size = read_u32()? as usize;
    let dropout_rate = f64::from_le_bytes(take(8)?.try_into().unwrap());
    let seed = u64::from_le_bytes(take(8)?.try_into().unwrap());
    let config = EncoderConfig {
        d_model,
        n_layers,
        n_heads,
        d_ff,
        max_len,
        vocab_size,
        dropout_rate,
        seed,
    };
    let meta_len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let meta: CheckpointMeta = serde_json::from_slice(take(meta_len)?)
        .map_err(|e| EncoderError::Checkpoint(format!("bad metadata: {e}")))?;

    // Shape a parameter set from the config, then overwrite every tensor.
    let mut params = EncoderParams::<F>::init(&config)?;
    let mut tensors = params.tensors_mut();
    for (name, t) in tensors.iter_mut() {
        let flat = t.flat();
        let count = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        if count != flat.len() {
            return Err(EncoderError::Checkpoint(format!(
                "tensor {name}: expected {} values, found {count}",
                flat.len()
            )));
        }
        for v in flat.iter_mut() {
            let raw = f32::from_le_bytes(take(4)?.try_into().unwrap());
            *v = fl::<F>(raw as f64);
        }
    }
    if !cur.is_empty() {
        return Err(EncoderError::Checkpoint(format!(
            "{} trailing bytes after tensors",
            cur.len()
        )));
    }
    drop(tensors);
    Ok((params, meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> EncoderParams<f32> {
        let config = EncoderConfig {
            d_model: 16,
            n_layers: 2,
            n_heads: 2,
            d_ff: 32,
            max_len: 8,
            vocab_size: 30,
            dropout_rate: 0.1,
            seed: 5,
        };
        EncoderParams::init(&config).unwrap()
    }

    #[test]
    fn round_trip_is_lossless_for_f32() {
        let params = tiny();
        let meta = CheckpointMeta {
            model: "dr".into(),
            fusion_mode: "early".into(),
            fusion_n: 5,
            condition: "std".into(),
            seed: 5,
            best_metric: Some(0.41),
            extra: BTreeMap::new(),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&params, &meta, &path).unwrap();
        let (back, meta_back) = load_checkpoint::<f32>(&path).unwrap();
        assert_eq!(params, back);
        assert_eq!(meta, meta_back);
    }

    #[test]
    fn corruption_is_detected() {
        let params = tiny();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&params, &CheckpointMeta::default(), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xff;
        std::fs::write(&path, &bytes).unwrap();
        match load_checkpoint::<f32>(&path) {
            Err(EncoderError::Checkpoint(msg)) => assert!(msg.contains("checksum")),
            other => panic!("expected checksum error, got {other:?}"),
        }
    }

    #[test]
    fn version_mismatch_is_named() {
        let params = tiny();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&params, &CheckpointMeta::default(), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        // Bump the version field and re-sign the payload.
        bytes[8] = 9;
        let body_len = bytes.len() - 32;
        let digest = Sha256::digest(&bytes[..body_len]);
        bytes[body_len..].copy_from_slice(&digest);
        std::fs::write(&path, &bytes).unwrap();
        match load_checkpoint::<f32>(&path) {
            Err(EncoderError::Checkpoint(msg)) => assert!(msg.contains("version")),
            other => panic!("expected version error, got {other:?}"),
        }
    }
}
