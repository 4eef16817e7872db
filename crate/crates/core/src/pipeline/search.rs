//! End-to-end search: BM25 → cross-encoder re-ranking, and dense retrieval
//! with optional N-best fusion, plus the document-input builders that feed
//! index construction.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::corpus::{CorpusBundle, CONDITION_CLEAN};
use crate::encoder::{rerank_score, text_input, EncoderParams};
use crate::fusion::{fused_doc_input, late_fuse_search, FusionConfig, FusionMode};
use crate::index::{bm25_search, nn_search, DocInput, InvertedIndex, RankedList, VectorIndex};
use crate::scalar::Scalar;
use crate::text::{tokenize_tokens, TokenSeq, TokenSource};

use super::{PipelineError, PreparedCorpus};

/// Plain 1-best (or clean) document inputs for a condition.
pub fn doc_inputs_text(
    prepared: &PreparedCorpus,
    condition: &str,
) -> Result<BTreeMap<String, DocInput>, PipelineError> {
    Ok(prepared
        .condition_docs(condition)?
        .iter()
        .map(|(id, seq)| (id.clone(), DocInput::Text(seq.clone())))
        .collect())
}

/// Document inputs from the k-th ranked hypothesis of a condition (late
/// fusion builds one index per rank). Documents with fewer hypotheses fall
/// back to their last available one.
pub fn doc_inputs_hyp(
    bundle: &CorpusBundle,
    prepared: &PreparedCorpus,
    condition: &str,
    rank: usize,
) -> Result<BTreeMap<String, DocInput>, PipelineError> {
    if condition == CONDITION_CLEAN {
        return Err(PipelineError::Config(
            "clean text has no hypothesis ranks".into(),
        ));
    }
    let sets = bundle.nbest.get(condition).ok_or_else(|| {
        PipelineError::Config(format!("no N-best sets for condition `{condition}`"))
    })?;
    let mut out = BTreeMap::new();
    for (doc_id, set) in sets {
        let k = rank.min(set.hypotheses.len() - 1);
        let seq = tokenize_tokens(
            &set.hypotheses[k],
            &prepared.vocab,
            TokenSource::Hyp(k as u16),
        );
        out.insert(doc_id.clone(), DocInput::Text(seq));
    }
    Ok(out)
}

/// Early-fusion document inputs: aligned frames over the top-n hypotheses.
/// Returns the number of documents that fell back to 1-best text because
/// their N-best set was missing.
pub fn doc_inputs_fused(
    bundle: &CorpusBundle,
    prepared: &PreparedCorpus,
    condition: &str,
    n: usize,
) -> Result<(BTreeMap<String, DocInput>, usize), PipelineError> {
    let fallbacks = prepared.condition_docs(condition)?;
    let sets = bundle.nbest.get(condition);
    let mut out = BTreeMap::new();
    let mut fell_back = 0usize;
    for (doc_id, fallback) in fallbacks {
        let set = sets.and_then(|m| m.get(doc_id));
        let (input, warned) = fused_doc_input(set, fallback, &prepared.vocab, n)?;
        if warned {
            fell_back += 1;
        }
        out.insert(doc_id.clone(), input);
    }
    Ok((out, fell_back))
}

/// BM25 top-k re-scored by the cross-encoder. The result carries re-rank
/// scores; documents outside the BM25 top-k never enter it.
pub fn search_rerank<F: Scalar>(
    query: &TokenSeq,
    index: &InvertedIndex,
    docs: &BTreeMap<String, TokenSeq>,
    params: &EncoderParams<F>,
    k: usize,
) -> Result<RankedList, PipelineError> {
    let candidates = bm25_search(index, query, k);
    let scored: Result<Vec<(String, f64)>, PipelineError> = candidates
        .entries
        .par_iter()
        .map(|(doc_id, _)| {
            let doc = docs
                .get(doc_id)
                .ok_or_else(|| PipelineError::Config(format!("doc {doc_id} not prepared")))?;
            let score = rerank_score(query, doc, params)?;
            Ok((doc_id.clone(), score.to_f64().expect("finite score")))
        })
        .collect();
    Ok(RankedList::from_scores("", scored?, k))
}

/// Dense retrieval: encode the query once, then run exact nearest-neighbor
/// search (fusion none/early — early fusion lives in the index build) or
/// late fusion over the per-rank indexes.
pub fn search_dr<F: Scalar>(
    query: &TokenSeq,
    indexes: &[&VectorIndex<F>],
    params: &EncoderParams<F>,
    fusion: Option<&FusionConfig>,
    k: usize,
) -> Result<RankedList, PipelineError> {
    if indexes.is_empty() {
        return Err(PipelineError::Config("no indexes given".into()));
    }
    let spec = text_input(query, params.config.max_len);
    let seq = crate::encoder::embed(&spec, params)?;
    let q_vec = crate::encoder::encode_trace(&seq, params, crate::encoder::Phase::Infer)?
        .cls()
        .to_owned();
    match fusion {
        Some(cfg) if cfg.mode == FusionMode::Late => {
            cfg.validate()?;
            if indexes.len() != cfg.n {
                return Err(PipelineError::Config(format!(
                    "late fusion with n={} needs {} indexes, got {}",
                    cfg.n,
                    cfg.n,
                    indexes.len()
                )));
            }
            Ok(late_fuse_search(indexes, &q_vec, k, cfg.late_score_scope)?)
        }
        _ => {
            if indexes.len() != 1 {
                return Err(PipelineError::Config(format!(
                    "non-late search expects exactly one index, got {}",
                    indexes.len()
                )));
            }
            Ok(nn_search(indexes[0], &q_vec, k)?)
        }
    }
}
