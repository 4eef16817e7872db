//! Negative mining and frozen validation case minting.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::CorpusBundle;
use crate::index::{bm25_search, InvertedIndex};

use super::{PipelineError, PreparedCorpus};

/// One training example: a query, its known item and J mined negatives.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainExample {
    pub query_id: String,
    pub positive_doc_id: String,
    pub negative_doc_ids: Vec<String>,
    pub epoch_minted: usize,
}

impl TrainExample {
    pub fn validate(&self, j: usize) -> Result<(), PipelineError> {
        if self.negative_doc_ids.len() != j {
            return Err(PipelineError::Config(format!(
                "example for {} has {} negatives, expected {j}",
                self.query_id,
                self.negative_doc_ids.len()
            )));
        }
        if self.negative_doc_ids.contains(&self.positive_doc_id) {
            return Err(PipelineError::Config(format!(
                "example for {} lists its positive among the negatives",
                self.query_id
            )));
        }
        Ok(())
    }
}

/// Frozen validation case for the re-ranker: one positive and one negative
/// from the top of the BM25 ranking (second-ranked when the top document is
/// the positive).
#[derive(Debug, Clone)]
pub struct RerankValCase {
    pub query_id: String,
    pub positive_doc_id: String,
    pub negative_doc_id: String,
}

/// Frozen validation case for dense retrieval: the relevant document plus
/// irrelevant BM25 candidates, ranked by dot product at validation time.
#[derive(Debug, Clone)]
pub struct DrValCase {
    pub query_id: String,
    pub positive_doc_id: String,
    pub negative_doc_ids: Vec<String>,
}

fn splitmix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(s: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in s.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    h
}

/// Uniform draws of distinct non-positive documents, used to pad when the
/// candidate ranking runs short.
pub(crate) fn random_negatives(
    all_docs: &[String],
    positive: &str,
    exclude: &[String],
    want: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<String> {
    let mut out = Vec::with_capacity(want);
    let mut guard = 0usize;
    while out.len() < want && guard < 100_000 {
        guard += 1;
        let pick = &all_docs[rng.gen_range(0..all_docs.len())];
        if pick != positive && !exclude.contains(pick) && !out.contains(pick) {
            out.push(pick.clone());
        }
    }
    out
}

/// Mines J negatives per training query from the BM25 ranking: top-scoring
/// documents excluding the positive, in rank order, padded with uniform
/// random non-positive documents when BM25 yields fewer than J.
pub fn mine_bm25_negatives(
    bundle: &CorpusBundle,
    prepared: &PreparedCorpus,
    index: &InvertedIndex,
    j: usize,
    seed: u64,
) -> Result<Vec<TrainExample>, PipelineError> {
    if j == 0 {
        return Err(PipelineError::Config("J must be at least 1".into()));
    }
    if bundle.docs.len() < j + 1 {
        return Err(PipelineError::Config(format!(
            "corpus of {} docs cannot supply {j} negatives plus a positive",
            bundle.docs.len()
        )));
    }
    let all_docs: Vec<String> = bundle.docs.iter().map(|d| d.doc_id.clone()).collect();
    let mut examples = Vec::with_capacity(bundle.split.train.len());
    for query_id in &bundle.split.train {
        let positive = bundle
            .qrels
            .get(query_id)
            .ok_or_else(|| PipelineError::Config(format!("query {query_id} has no qrel")))?
            .clone();
        let query = prepared.query(query_id)?;
        let ranked = bm25_search(index, query, j + 1);
        let mut negatives: Vec<String> = ranked
            .entries
            .into_iter()
            .map(|(d, _)| d)
            .filter(|d| *d != positive)
            .take(j)
            .collect();
        if negatives.len() < j {
            let mut rng =
                ChaCha8Rng::seed_from_u64(splitmix(seed, fnv1a(query_id)));
            let pad = random_negatives(
                &all_docs,
                &positive,
                &negatives,
                j - negatives.len(),
                &mut rng,
            );
            negatives.extend(pad);
        }
        let example = TrainExample {
            query_id: query_id.clone(),
            positive_doc_id: positive,
            negative_doc_ids: negatives,
            epoch_minted: 0,
        };
        example.validate(j)?;
        examples.push(example);
    }
    Ok(examples)
}

/// Mints the frozen re-ranker validation cases.
pub fn mint_rerank_validation(
    bundle: &CorpusBundle,
    prepared: &PreparedCorpus,
    index: &InvertedIndex,
    seed: u64,
) -> Result<Vec<RerankValCase>, PipelineError> {
    let all_docs: Vec<String> = bundle.docs.iter().map(|d| d.doc_id.clone()).collect();
    let mut cases = Vec::with_capacity(bundle.split.validation.len());
    for query_id in &bundle.split.validation {
        let positive = bundle
            .qrels
            .get(query_id)
            .ok_or_else(|| PipelineError::Config(format!("query {query_id} has no qrel")))?
            .clone();
        let query = prepared.query(query_id)?;
        let ranked = bm25_search(index, query, 2);
        let negative = ranked
            .entries
            .iter()
            .map(|(d, _)| d)
            .find(|d| **d != positive)
            .cloned();
        let negative = match negative {
            Some(d) => d,
            None => {
                let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed, fnv1a(query_id)));
                random_negatives(&all_docs, &positive, &[], 1, &mut rng)
                    .pop()
                    .ok_or_else(|| PipelineError::Config("corpus too small".into()))?
            }
        };
        cases.push(RerankValCase {
            query_id: query_id.clone(),
            positive_doc_id: positive,
            negative_doc_id: negative,
        });
    }
    Ok(cases)
}

/// Mints the frozen dense-retrieval validation cases: `candidates`
/// irrelevant documents from BM25, padded randomly, per validation query.
pub fn mint_dr_validation(
    bundle: &CorpusBundle,
    prepared: &PreparedCorpus,
    index: &InvertedIndex,
    candidates: usize,
    seed: u64,
) -> Result<Vec<DrValCase>, PipelineError> {
    let all_docs: Vec<String> = bundle.docs.iter().map(|d| d.doc_id.clone()).collect();
    if all_docs.len() < candidates + 1 {
        return Err(PipelineError::Config(format!(
            "corpus of {} docs cannot supply {candidates} validation candidates",
            all_docs.len()
        )));
    }
    let mut cases = Vec::with_capacity(bundle.split.validation.len());
    for query_id in &bundle.split.validation {
        let positive = bundle
            .qrels
            .get(query_id)
            .ok_or_else(|| PipelineError::Config(format!("query {query_id} has no qrel")))?
            .clone();
        let query = prepared.query(query_id)?;
        let ranked = bm25_search(index, query, candidates + 1);
        let mut negatives: Vec<String> = ranked
            .entries
            .into_iter()
            .map(|(d, _)| d)
            .filter(|d| *d != positive)
            .take(candidates)
            .collect();
        if negatives.len() < candidates {
            let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed, fnv1a(query_id)));
            let pad = random_negatives(
                &all_docs,
                &positive,
                &negatives,
                candidates - negatives.len(),
                &mut rng,
            );
            negatives.extend(pad);
        }
        cases.push(DrValCase {
            query_id: query_id.clone(),
            positive_doc_id: positive,
            negative_doc_ids: negatives,
        });
    }
    Ok(cases)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::generate_corpus;
    use crate::index::build_bm25;

    fn setup() -> (CorpusBundle, PreparedCorpus, InvertedIndex) {
        let bundle = generate_corpus(40, 150, 11).unwrap();
        let prepared = PreparedCorpus::new(&bundle, 1);
        let docs = prepared.condition_docs("clean").unwrap().clone();
        let index = build_bm25(&docs).unwrap();
        (bundle, prepared, index)
    }

    #[test]
    fn negatives_never_contain_the_positive() {
        let (bundle, prepared, index) = setup();
        let examples = mine_bm25_negatives(&bundle, &prepared, &index, 5, 3).unwrap();
        assert_eq!(examples.len(), bundle.split.train.len());
        for ex in &examples {
            ex.validate(5).unwrap();
        }
    }

    #[test]
    fn all_negatives_present_even_for_sparse_queries() {
        let (bundle, prepared, index) = setup();
        // J close to corpus size forces the random-pad path for most queries.
        let examples = mine_bm25_negatives(&bundle, &prepared, &index, 30, 3).unwrap();
        for ex in &examples {
            assert_eq!(ex.negative_doc_ids.len(), 30);
            let mut dedup = ex.negative_doc_ids.clone();
            dedup.sort();
            dedup.dedup();
            assert_eq!(dedup.len(), 30, "duplicate negatives for {}", ex.query_id);
        }
    }

    #[test]
    fn oversized_j_is_a_configuration_error() {
        let (bundle, prepared, index) = setup();
        assert!(mine_bm25_negatives(&bundle, &prepared, &index, 40, 3).is_err());
    }

    #[test]
    fn mining_is_deterministic() {
        let (bundle, prepared, index) = setup();
        let a = mine_bm25_negatives(&bundle, &prepared, &index, 5, 3).unwrap();
        let b = mine_bm25_negatives(&bundle, &prepared, &index, 5, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn validation_cases_exclude_positives() {
        let (bundle, prepared, index) = setup();
        let rerank = mint_rerank_validation(&bundle, &prepared, &index, 5).unwrap();
        assert_eq!(rerank.len(), bundle.split.validation.len());
        for c in &rerank {
            assert_ne!(c.positive_doc_id, c.negative_doc_id);
        }
        let dr = mint_dr_validation(&bundle, &prepared, &index, 9, 5).unwrap();
        for c in &dr {
            assert_eq!(c.negative_doc_ids.len(), 9);
            assert!(!c.negative_doc_ids.contains(&c.positive_doc_id));
        }
    }
}
