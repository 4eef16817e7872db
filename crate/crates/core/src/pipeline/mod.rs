//! Training and end-to-end search orchestration.
//!
//! Covers negative mining (BM25 and epoch-wise ANCE refresh), the re-ranker
//! and dense-retrieval training loops with validation-based checkpoint
//! selection, and the search entry points (BM25 → re-rank, dense retrieval
//! with optional N-best fusion).

mod negatives;
mod search;
mod train;

use std::collections::BTreeMap;

use thiserror::Error;

use crate::corpus::{CorpusBundle, CorpusError, CONDITION_CLEAN};
use crate::encoder::EncoderError;
use crate::eval::EvalError;
use crate::fusion::FusionError;
use crate::index::IndexError;
use crate::text::{build_vocab, tokenize_tokens, TextError, TokenSeq, TokenSource, Vocabulary};

pub use negatives::{mine_bm25_negatives, DrValCase, RerankValCase, TrainExample};
pub use search::{
    doc_inputs_fused, doc_inputs_hyp, doc_inputs_text, search_dr, search_rerank,
};
pub use train::{
    train_dr, train_reranker, EpochLog, NegativeProvenance, TrainConfig, TrainState,
    DESK_LR_DR, DESK_LR_RERANK, PAPER_EPOCHS_DR, PAPER_EPOCHS_RERANK, PAPER_LR_DR,
    PAPER_LR_RERANK,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Tokenized view of a bundle: the vocabulary, query token sequences and
/// per-condition 1-best document token sequences, computed once.
pub struct PreparedCorpus {
    pub vocab: Vocabulary,
    pub queries: BTreeMap<String, TokenSeq>,
    /// condition tag → doc_id → tokens ("clean" plus every attached
    /// condition's 1-best hypothesis).
    pub docs: BTreeMap<String, BTreeMap<String, TokenSeq>>,
}

impl PreparedCorpus {
    pub fn new(bundle: &CorpusBundle, min_count: usize) -> Self {
        let vocab = build_vocab(bundle, min_count);
        let queries = bundle
            .queries
            .iter()
            .map(|(qid, tokens)| {
                (
                    qid.clone(),
                    tokenize_tokens(tokens, &vocab, TokenSource::Query),
                )
            })
            .collect();
        let mut docs: BTreeMap<String, BTreeMap<String, TokenSeq>> = BTreeMap::new();
        let clean = bundle
            .docs
            .iter()
            .map(|d| {
                (
                    d.doc_id.clone(),
                    tokenize_tokens(&d.clean_tokens, &vocab, TokenSource::Clean),
                )
            })
            .collect();
        docs.insert(CONDITION_CLEAN.to_string(), clean);
        for (condition, sets) in &bundle.nbest {
            let one_best = sets
                .iter()
                .map(|(doc_id, set)| {
                    (
                        doc_id.clone(),
                        tokenize_tokens(&set.hypotheses[0], &vocab, TokenSource::Hyp(0)),
                    )
                })
                .collect();
            docs.insert(condition.clone(), one_best);
        }
        PreparedCorpus {
            vocab,
            queries,
            docs,
        }
    }

    /// 1-best (or clean) token sequences for a condition.
    pub fn condition_docs(
        &self,
        condition: &str,
    ) -> Result<&BTreeMap<String, TokenSeq>, PipelineError> {
        self.docs.get(condition).ok_or_else(|| {
            PipelineError::Config(format!(
                "no documents prepared for condition `{condition}`"
            ))
        })
    }

    pub fn query(&self, query_id: &str) -> Result<&TokenSeq, PipelineError> {
        self.queries
            .get(query_id)
            .ok_or_else(|| PipelineError::Config(format!("unknown query {query_id}")))
    }
}
