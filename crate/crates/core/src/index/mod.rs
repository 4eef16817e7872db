//! First-stage retrieval: BM25 over an inverted index and exact
//! inner-product search over dense document vectors.

mod bm25;
mod io;
mod vector;

use thiserror::Error;

pub use bm25::{bm25_score, bm25_search, build_bm25, InvertedIndex};
pub use io::{load_bm25, load_dense, save_bm25, save_dense};
pub use vector::{build_vector_index, encode_doc_input, nn_search, DocInput, VectorIndex};

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("doc_id {0} is not indexed")]
    Lookup(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("encoding failed for doc {doc_id}: {message}")]
    Encoding { doc_id: String, message: String },
    #[error("index file is malformed: {0}")]
    Format(String),
    #[error("index file checksum mismatch")]
    Checksum,
    #[error("unsupported index version {found}, expected {expected}")]
    Version { found: u32, expected: u32 },
    #[error("index kind mismatch: found {found}, expected {expected}")]
    Kind { found: String, expected: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A ranked result list: entries strictly ordered by descending score,
/// ties broken by ascending doc_id; no duplicate documents.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub query_id: String,
    pub entries: Vec<(String, f64)>,
}

impl RankedList {
    /// Builds a list from raw scores, applying the canonical order and
    /// keeping the top `k`.
    pub fn from_scores(
        query_id: impl Into<String>,
        scores: impl IntoIterator<Item = (String, f64)>,
        k: usize,
    ) -> Self {
        let mut entries: Vec<(String, f64)> = scores.into_iter().collect();
        entries.sort_unstable_by(|a, b| {
            b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
        });
        entries.truncate(k);
        RankedList {
            query_id: query_id.into(),
            entries,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// 1-based rank of a document, if present.
    pub fn rank_of(&self, doc_id: &str) -> Option<usize> {
        self.entries
            .iter()
            .position(|(d, _)| d == doc_id)
            .map(|p| p + 1)
    }

    /// Checks the canonical-order invariant.
    pub fn is_canonical(&self) -> bool {
        let ordered = self.entries.windows(2).all(|w| {
            w[0].1 > w[1].1 || (w[0].1 == w[1].1 && w[0].0 < w[1].0)
        });
        let mut ids: Vec<&str> = self.entries.iter().map(|(d, _)| d.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        ordered && ids.len() == self.entries.len()
    }
}
