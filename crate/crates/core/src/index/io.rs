//! Binary index files.
//!
//! Layout, little-endian: magic `SCRIDX\x01\x00` · version u32 · kind u8
//! (0 = bm25, 1 = dense) · payload · SHA-256 of everything preceding.
//! The dense payload is the doc_id table followed by a row-major f32
//! matrix; the sparse payload is doc table, lengths and postings.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use sha2::{Digest, Sha256};

use crate::scalar::{fl, Scalar};

use super::{InvertedIndex, IndexError, VectorIndex};

const MAGIC: &[u8; 8] = b"SCRIDX\x01\x00";
const VERSION: u32 = 1;
const KIND_BM25: u8 = 0;
const KIND_DENSE: u8 = 1;

fn kind_name(kind: u8) -> &'static str {
    match kind {
        KIND_BM25 => "bm25",
        KIND_DENSE => "dense",
        _ => "unknown",
    }
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], IndexError> {
        if self.buf.len() < n {
            return Err(IndexError::Format("unexpected end of file".into()));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8, IndexError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, IndexError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, IndexError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32, IndexError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, IndexError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String, IndexError> {
        let len = self.u32()? as usize;
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|e| IndexError::Format(format!("bad utf-8 string: {e}")))
    }

    fn done(&self) -> Result<(), IndexError> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(IndexError::Format(format!(
                "{} trailing bytes",
                self.buf.len()
            )))
        }
    }
}

fn push_string(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

fn open_payload(path: &Path, expected_kind: u8) -> Result<Vec<u8>, IndexError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < MAGIC.len() + 5 + 32 {
        return Err(IndexError::Format("file too short".into()));
    }
    let (body, checksum) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != checksum {
        return Err(IndexError::Checksum);
    }
    let mut r = Reader { buf: body };
    if r.take(8)? != MAGIC {
        return Err(IndexError::Format("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(IndexError::Version {
            found: version,
            expected: VERSION,
        });
    }
    let kind = r.u8()?;
    if kind != expected_kind {
        return Err(IndexError::Kind {
            found: kind_name(kind).into(),
            expected: kind_name(expected_kind).into(),
        });
    }
    Ok(r.buf.to_vec())
}

fn write_file(path: &Path, kind: u8, payload: &[u8]) -> Result<(), IndexError> {
    let mut buf = Vec::with_capacity(payload.len() + 64);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.push(kind);
    buf.extend_from_slice(payload);
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    std::fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

pub fn save_bm25(index: &InvertedIndex, path: &Path) -> Result<(), IndexError> {
    let mut payload = Vec::new();
    payload.extend_from_slice(&index.k1.to_le_bytes());
    payload.extend_from_slice(&index.b.to_le_bytes());
    let (postings, doc_ids, doc_len, _, _) = index.clone().into_parts();
    payload.extend_from_slice(&(doc_ids.len() as u64).to_le_bytes());
    for (id, len) in doc_ids.iter().zip(doc_len.iter()) {
        push_string(&mut payload, id);
        payload.extend_from_slice(&len.to_le_bytes());
    }
    let mut terms: Vec<u32> = postings.keys().copied().collect();
    terms.sort_unstable();
    payload.extend_from_slice(&(terms.len() as u64).to_le_bytes());
    for t in terms {
        let list = &postings[&t];
        payload.extend_from_slice(&t.to_le_bytes());
        payload.extend_from_slice(&(list.len() as u64).to_le_bytes());
        for (doc, tf) in list {
            payload.extend_from_slice(&doc.to_le_bytes());
            payload.extend_from_slice(&tf.to_le_bytes());
        }
    }
    write_file(path, KIND_BM25, &payload)
}

pub fn load_bm25(path: &Path) -> Result<InvertedIndex, IndexError> {
    let payload = open_payload(path, KIND_BM25)?;
    let mut r = Reader { buf: &payload };
    let k1 = r.f64()?;
    let b = r.f64()?;
    let num_docs = r.u64()? as usize;
    let mut doc_ids = Vec::with_capacity(num_docs);
    let mut doc_len = Vec::with_capacity(num_docs);
    for _ in 0..num_docs {
        doc_ids.push(r.string()?);
        doc_len.push(r.u32()?);
    }
    let num_terms = r.u64()? as usize;
    let mut postings = std::collections::HashMap::with_capacity(num_terms);
    for _ in 0..num_terms {
        let term = r.u32()?;
        let len = r.u64()? as usize;
        let mut list = Vec::with_capacity(len);
        for _ in 0..len {
            let doc = r.u32()?;
            let tf = r.u32()?;
            list.push((doc, tf));
        }
        postings.insert(term, list);
    }
    r.done()?;
    Ok(InvertedIndex::from_parts(postings, doc_ids, doc_len, k1, b))
}

/// Vectors are stored as f32 regardless of the working scalar.
pub fn save_dense<F: Scalar>(index: &VectorIndex<F>, path: &Path) -> Result<(), IndexError> {
    let mut payload = Vec::new();
    push_string(&mut payload, &index.source_tag);
    payload.extend_from_slice(&(index.num_docs() as u64).to_le_bytes());
    payload.extend_from_slice(&(index.dim() as u32).to_le_bytes());
    for id in &index.doc_ids {
        push_string(&mut payload, id);
    }
    for v in index.vectors.iter() {
        let f = v.to_f32().unwrap_or(f32::NAN);
        payload.extend_from_slice(&f.to_le_bytes());
    }
    write_file(path, KIND_DENSE, &payload)
}

pub fn load_dense<F: Scalar>(path: &Path) -> Result<VectorIndex<F>, IndexError> {
    let payload = open_payload(path, KIND_DENSE)?;
    let mut r = Reader { buf: &payload };
    let source_tag = r.string()?;
    let num_docs = r.u64()? as usize;
    let dim = r.u32()? as usize;
    let mut doc_ids = Vec::with_capacity(num_docs);
    for _ in 0..num_docs {
        doc_ids.push(r.string()?);
    }
    let mut vectors = Array2::<F>::zeros((num_docs, dim));
    for i in 0..num_docs {
        for j in 0..dim {
            vectors[[i, j]] = fl::<F>(r.f32()? as f64);
        }
    }
    r.done()?;
    VectorIndex::from_rows(doc_ids, vectors, source_tag)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::{TokenSeq, TokenSource};
    use std::collections::BTreeMap;

    fn sample_bm25() -> InvertedIndex {
        let mut docs = BTreeMap::new();
        docs.insert(
            "d1".into(),
            TokenSeq::new(vec![10, 11, 10], TokenSource::Clean),
        );
        docs.insert("d2".into(), TokenSeq::new(vec![11, 12], TokenSource::Clean));
        super::super::build_bm25(&docs).unwrap()
    }

    fn sample_dense() -> VectorIndex<f32> {
        let vectors = ndarray::array![[1.0f32, 2.0], [3.0, -4.0], [0.5, 0.25]];
        VectorIndex::from_rows(
            vec!["a".into(), "b".into(), "c".into()],
            vectors,
            "std:hyp0",
        )
        .unwrap()
    }

    #[test]
    fn bm25_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bm25.idx");
        let index = sample_bm25();
        save_bm25(&index, &path).unwrap();
        assert_eq!(load_bm25(&path).unwrap(), index);
    }

    #[test]
    fn dense_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dense.idx");
        let index = sample_dense();
        save_dense(&index, &path).unwrap();
        assert_eq!(load_dense::<f32>(&path).unwrap(), index);
    }

    #[test]
    fn kind_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bm25.idx");
        save_bm25(&sample_bm25(), &path).unwrap();
        match load_dense::<f32>(&path) {
            Err(IndexError::Kind { found, expected }) => {
                assert_eq!(found, "bm25");
                assert_eq!(expected, "dense");
            }
            other => panic!("expected kind error, got {other:?}"),
        }
    }

    #[test]
    fn corruption_and_version_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dense.idx");
        save_dense(&sample_dense(), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x01;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_dense::<f32>(&path), Err(IndexError::Checksum)));

        // Re-sign with a bumped version to hit the version check.
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[mid] ^= 0x01; // undo the corruption
        bytes[8] = 9;
        let body = bytes.len() - 32;
        let digest = Sha256::digest(&bytes[..body]);
        bytes[body..].copy_from_slice(&digest);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_dense::<f32>(&path),
            Err(IndexError::Version { found: 9, .. })
        ));
    }
}
