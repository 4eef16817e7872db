//! Okapi BM25 with the ln(1+·) IDF.
//!
//! score(q, d) = Σ_t qtf(t) · IDF(t) · tf·(k1+1) / (tf + k1·(1−b+b·dl/avgdl))
//! with IDF(t) = ln(1 + (N − df + 0.5)/(df + 0.5)). Repeated query terms
//! contribute once per occurrence.

use std::collections::{BTreeMap, HashMap};

use crate::text::TokenSeq;

use super::{IndexError, RankedList};

pub const DEFAULT_K1: f64 = 1.2;
pub const DEFAULT_B: f64 = 0.75;

/// Postings plus document-length statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct InvertedIndex {
    /// term id → (doc index, term frequency), sorted by doc index.
    postings: HashMap<u32, Vec<(u32, u32)>>,
    doc_ids: Vec<String>,
    doc_len: Vec<u32>,
    avg_doc_len: f64,
    pub k1: f64,
    pub b: f64,
}

impl InvertedIndex {
    pub fn num_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn avg_doc_len(&self) -> f64 {
        self.avg_doc_len
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn doc_len(&self, doc_id: &str) -> Option<u32> {
        self.doc_index(doc_id).map(|i| self.doc_len[i as usize])
    }

    pub fn postings_of(&self, term: u32) -> &[(u32, u32)] {
        self.postings.get(&term).map(Vec::as_slice).unwrap_or(&[])
    }

    fn doc_index(&self, doc_id: &str) -> Option<u32> {
        self.doc_ids
            .binary_search_by(|d| d.as_str().cmp(doc_id))
            .ok()
            .map(|i| i as u32)
    }

    fn idf(&self, df: usize) -> f64 {
        let n = self.num_docs() as f64;
        let df = df as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    fn tf_norm(&self, tf: u32, dl: u32) -> f64 {
        let tf = tf as f64;
        let dl = dl as f64;
        tf * (self.k1 + 1.0) / (tf + self.k1 * (1.0 - self.b + self.b * dl / self.avg_doc_len))
    }

    pub(crate) fn into_parts(
        self,
    ) -> (HashMap<u32, Vec<(u32, u32)>>, Vec<String>, Vec<u32>, f64, f64) {
        (self.postings, self.doc_ids, self.doc_len, self.k1, self.b)
    }

    pub(crate) fn from_parts(
        postings: HashMap<u32, Vec<(u32, u32)>>,
        doc_ids: Vec<String>,
        doc_len: Vec<u32>,
        k1: f64,
        b: f64,
    ) -> Self {
        let avg_doc_len = if doc_len.is_empty() {
            0.0
        } else {
            doc_len.iter().map(|&l| l as f64).sum::<f64>() / doc_len.len() as f64
        };
        InvertedIndex {
            postings,
            doc_ids,
            doc_len,
            avg_doc_len,
            k1,
            b,
        }
    }
}

/// Builds the index with the default k1 = 1.2, b = 0.75.
pub fn build_bm25(docs: &BTreeMap<String, TokenSeq>) -> Result<InvertedIndex, IndexError> {
    build_bm25_with(docs, DEFAULT_K1, DEFAULT_B)
}

pub fn build_bm25_with(
    docs: &BTreeMap<String, TokenSeq>,
    k1: f64,
    b: f64,
) -> Result<InvertedIndex, IndexError> {
    if docs.is_empty() {
        return Err(IndexError::Empty("no documents to index".into()));
    }
    let doc_ids: Vec<String> = docs.keys().cloned().collect();
    let mut doc_len = Vec::with_capacity(doc_ids.len());
    let mut postings: HashMap<u32, Vec<(u32, u32)>> = HashMap::new();
    for (idx, seq) in docs.values().enumerate() {
        doc_len.push(seq.len() as u32);
        let mut tf: BTreeMap<u32, u32> = BTreeMap::new();
        for &t in &seq.ids {
            *tf.entry(t).or_insert(0) += 1;
        }
        for (t, f) in tf {
            postings.entry(t).or_default().push((idx as u32, f));
        }
    }
    // Doc iteration is ascending, so postings are already sorted by doc.
    Ok(InvertedIndex::from_parts(postings, doc_ids, doc_len, k1, b))
}

/// BM25 score of one document for a query. Unknown documents are a lookup
/// error; query terms absent from the document contribute zero.
pub fn bm25_score(
    index: &InvertedIndex,
    query: &TokenSeq,
    doc_id: &str,
) -> Result<f64, IndexError> {
    let doc = index
        .doc_index(doc_id)
        .ok_or_else(|| IndexError::Lookup(doc_id.to_string()))?;
    let dl = index.doc_len[doc as usize];
    let mut score = 0.0;
    for &t in &query.ids {
        let Some(list) = index.postings.get(&t) else {
            continue;
        };
        let Ok(pos) = list.binary_search_by_key(&doc, |&(d, _)| d) else {
            continue;
        };
        let tf = list[pos].1;
        score += index.idf(list.len()) * index.tf_norm(tf, dl);
    }
    Ok(score)
}

/// Exhaustive top-k over the union of the query terms' postings.
pub fn bm25_search(index: &InvertedIndex, query: &TokenSeq, k: usize) -> RankedList {
    let mut scores: HashMap<u32, f64> = HashMap::new();
    for &t in &query.ids {
        let Some(list) = index.postings.get(&t) else {
            continue;
        };
        let idf = index.idf(list.len());
        for &(doc, tf) in list {
            *scores.entry(doc).or_insert(0.0) +=
                idf * index.tf_norm(tf, index.doc_len[doc as usize]);
        }
    }
    // The caller attaches the query id when assembling a run.
    RankedList::from_scores(
        "",
        scores
            .into_iter()
            .map(|(doc, s)| (index.doc_ids[doc as usize].clone(), s)),
        k,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::TokenSource;

    fn seq(ids: &[u32]) -> TokenSeq {
        TokenSeq::new(ids.to_vec(), TokenSource::Clean)
    }

    /// {d1: "a b", d2: "b c", d3: "c d"} with a=10 b=11 c=12 d=13.
    fn toy() -> BTreeMap<String, TokenSeq> {
        let mut docs = BTreeMap::new();
        docs.insert("d1".to_string(), seq(&[10, 11]));
        docs.insert("d2".to_string(), seq(&[11, 12]));
        docs.insert("d3".to_string(), seq(&[12, 13]));
        docs
    }

    #[test]
    fn hand_computed_score() {
        // query "a" on d1: tf=1, df=1, N=3, dl=2, avgdl=2
        // IDF = ln(1 + 2.5/1.5) = 0.98083; tf term = 2.2/2.2 = 1
        let index = build_bm25(&toy()).unwrap();
        assert_eq!(index.avg_doc_len(), 2.0);
        let score = bm25_score(&index, &seq(&[10]), "d1").unwrap();
        assert!((score - 0.9808).abs() < 1e-3);
        assert!((score - (1.0f64 + 2.5 / 1.5).ln()).abs() < 1e-12);
    }

    #[test]
    fn no_overlap_scores_zero() {
        let index = build_bm25(&toy()).unwrap();
        assert_eq!(bm25_score(&index, &seq(&[99]), "d1").unwrap(), 0.0);
    }

    #[test]
    fn duplicated_query_term_doubles_its_contribution() {
        let index = build_bm25(&toy()).unwrap();
        let once = bm25_score(&index, &seq(&[10]), "d1").unwrap();
        let twice = bm25_score(&index, &seq(&[10, 10]), "d1").unwrap();
        assert!((twice - 2.0 * once).abs() < 1e-12);
    }

    #[test]
    fn unknown_doc_is_a_lookup_error() {
        let index = build_bm25(&toy()).unwrap();
        assert!(matches!(
            bm25_score(&index, &seq(&[10]), "nope"),
            Err(IndexError::Lookup(_))
        ));
    }

    #[test]
    fn rebuild_is_identical_and_empty_docs_indexable() {
        let mut docs = toy();
        docs.insert("d0".to_string(), seq(&[]));
        let a = build_bm25(&docs).unwrap();
        let b = build_bm25(&docs).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.doc_len("d0"), Some(0));
    }

    #[test]
    fn search_agrees_with_full_scoring() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let mut docs = BTreeMap::new();
        for i in 0..50 {
            let len = rng.gen_range(3..40);
            let ids: Vec<u32> = (0..len).map(|_| rng.gen_range(5..80)).collect();
            docs.insert(format!("d{i:02}"), seq(&ids));
        }
        let index = build_bm25(&docs).unwrap();
        for _ in 0..100 {
            let qlen = rng.gen_range(1..6);
            let q = seq(&(0..qlen).map(|_| rng.gen_range(5..80)).collect::<Vec<_>>());
            let by_search = bm25_search(&index, &q, docs.len());
            // Brute force: score every document directly.
            let brute = RankedList::from_scores(
                "",
                docs.keys().filter_map(|d| {
                    let s = bm25_score(&index, &q, d).unwrap();
                    (s != 0.0).then(|| (d.clone(), s))
                }),
                docs.len(),
            );
            assert_eq!(by_search.entries, brute.entries);
        }
    }

    #[test]
    fn idf_is_nonnegative_for_all_document_frequencies() {
        let index = build_bm25(&toy()).unwrap();
        for df in 0..=index.num_docs() {
            assert!(index.idf(df) >= 0.0, "df={df}");
        }
    }
}
