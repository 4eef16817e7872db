//! Synthetic known-item collection and ASR-noise simulation.
//!
//! The collection stands in for a corpus of spoken documents: each document
//! carries clean reference tokens and a short title used as its known-item
//! query. A memoryless token-edit channel corrupts the clean text at
//! calibrated word error rates and emits ranked N-best hypothesis sets, the
//! analog of N-best ASR transcripts.

mod channel;
mod generate;
mod io;
mod wer;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use channel::{
    attach_nbest, calibrate_channel, corrupt, generate_nbest, NoiseChannel, DEFAULT_SAMPLES,
};
pub use generate::{generate_corpus, generate_corpus_with, GeneratorConfig};
pub use io::{export_bundle, import_bundle};
pub use wer::{edit_distance, wer};

/// The three word-error-rate presets mirrored by the noise channel:
/// standard (31.1%), semi-supervised (23.95%) and lattice-oracle (11.18%).
pub const WER_STANDARD: f64 = 0.311;
pub const WER_SEMI: f64 = 0.2395;
pub const WER_ORACLE: f64 = 0.1118;

/// Canonical condition tags used to key [`CorpusBundle::nbest`].
pub const CONDITION_STD: &str = "std";
pub const CONDITION_SEMI: &str = "semi";
pub const CONDITION_ORACLE: &str = "oracle";
/// Pseudo-condition naming the clean reference text.
pub const CONDITION_CLEAN: &str = "clean";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("reference token sequence is empty")]
    EmptyReference,
    #[error("channel calibration did not converge after {iterations} iterations (target WER {target}, achieved {achieved})")]
    Calibration {
        iterations: usize,
        target: f64,
        achieved: f64,
    },
    #[error("bundle invariant violated: {0}")]
    Invariant(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One synthetic spoken document: clean reference tokens plus the title
/// that serves as its known-item query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticDoc {
    pub doc_id: String,
    pub clean_tokens: Vec<String>,
    pub title_tokens: Vec<String>,
}

/// Parameters of the memoryless token-edit channel.
///
/// `sub_rate`, `del_rate` apply per reference token; `ins_rate` applies per
/// gap (one gap before each token plus one trailing gap). Substitution
/// candidates come from a character-edit-distance confusion set weighted by
/// `exp(-distance / confusion_temperature)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseChannelSpec {
    pub sub_rate: f64,
    pub del_rate: f64,
    pub ins_rate: f64,
    pub confusion_temperature: f64,
    pub target_wer: f64,
    pub seed: u64,
}

impl NoiseChannelSpec {
    /// Spec with all rates zero (noiseless channel).
    pub fn silent(seed: u64) -> Self {
        NoiseChannelSpec {
            sub_rate: 0.0,
            del_rate: 0.0,
            ins_rate: 0.0,
            confusion_temperature: 1.0,
            target_wer: 0.0,
            seed,
        }
    }

    /// Uncalibrated starting point for a target corpus WER. Error mass is
    /// split 60/20/20 across substitutions, deletions and insertions,
    /// roughly the profile of a traditional ASR system; `calibrate_channel`
    /// rescales all three to hit the target.
    pub fn preset(target_wer: f64, seed: u64) -> Self {
        NoiseChannelSpec {
            sub_rate: 0.6 * target_wer,
            del_rate: 0.2 * target_wer,
            ins_rate: 0.2 * target_wer,
            confusion_temperature: 1.0,
            target_wer,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let in_unit = |r: f64| (0.0..1.0).contains(&r);
        if !in_unit(self.sub_rate) || !in_unit(self.del_rate) || !in_unit(self.ins_rate) {
            return Err(CorpusError::Config(
                "channel rates must lie in [0, 1)".into(),
            ));
        }
        if self.sub_rate + self.del_rate >= 1.0 {
            return Err(CorpusError::Config(
                "sub_rate + del_rate must be < 1".into(),
            ));
        }
        if self.confusion_temperature <= 0.0 {
            return Err(CorpusError::Config(
                "confusion_temperature must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.target_wer) {
            return Err(CorpusError::Config("target_wer must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Ranked corrupted hypotheses for one document under one noise condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NBestSet {
    pub doc_id: String,
    /// Hypotheses in descending channel log-likelihood; index 0 is the 1-best.
    pub hypotheses: Vec<Vec<String>>,
    pub log_likelihoods: Vec<f64>,
    pub wer_per_hyp: Vec<f64>,
    /// Index of the minimum-WER hypothesis (the within-set oracle).
    pub oracle_index: usize,
    /// True when sampling produced fewer distinct hypotheses than requested.
    #[serde(default)]
    pub underfilled: bool,
}

impl NBestSet {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let n = self.hypotheses.len();
        if n == 0 || n > 20 {
            return Err(CorpusError::Invariant(format!(
                "nbest for {} has {} hypotheses, expected 1..=20",
                self.doc_id, n
            )));
        }
        if self.log_likelihoods.len() != n || self.wer_per_hyp.len() != n {
            return Err(CorpusError::Invariant(format!(
                "nbest for {} has ragged parallel lists",
                self.doc_id
            )));
        }
        if self
            .log_likelihoods
            .windows(2)
            .any(|w| w[0] < w[1])
        {
            return Err(CorpusError::Invariant(format!(
                "nbest log-likelihoods for {} are not nonincreasing",
                self.doc_id
            )));
        }
        let min = self
            .wer_per_hyp
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        if self.oracle_index >= n || self.wer_per_hyp[self.oracle_index] > min {
            return Err(CorpusError::Invariant(format!(
                "oracle_index for {} does not point at the minimum-WER hypothesis",
                self.doc_id
            )));
        }
        Ok(())
    }
}

/// Partition of query ids into train / validation / eval.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub eval: Vec<String>,
}

/// The full known-item collection: documents, queries, qrels, the query
/// split and any attached N-best sets keyed by condition tag then doc id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusBundle {
    pub docs: Vec<SyntheticDoc>,
    pub nbest: BTreeMap<String, BTreeMap<String, NBestSet>>,
    pub queries: BTreeMap<String, Vec<String>>,
    pub qrels: BTreeMap<String, String>,
    pub split: SplitAssignment,
}

impl CorpusBundle {
    pub fn doc(&self, doc_id: &str) -> Option<&SyntheticDoc> {
        self.docs.iter().find(|d| d.doc_id == doc_id)
    }

    /// Tokens of a document under a condition tag: the clean reference for
    /// [`CONDITION_CLEAN`], otherwise the 1-best hypothesis of the attached
    /// N-best set.
    pub fn doc_tokens<'a>(
        &'a self,
        doc_id: &str,
        condition: &str,
    ) -> Option<&'a [String]> {
        if condition == CONDITION_CLEAN {
            return self.doc(doc_id).map(|d| d.clean_tokens.as_slice());
        }
        self.nbest
            .get(condition)
            .and_then(|m| m.get(doc_id))
            .map(|s| s.hypotheses[0].as_slice())
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let mut ids = std::collections::HashSet::new();
        for d in &self.docs {
            if !ids.insert(d.doc_id.as_str()) {
                return Err(CorpusError::Invariant(format!(
                    "duplicate doc_id {}",
                    d.doc_id
                )));
            }
            if d.clean_tokens.is_empty() {
                return Err(CorpusError::Invariant(format!(
                    "doc {} has empty clean_tokens",
                    d.doc_id
                )));
            }
            if !d.title_tokens.iter().any(|t| d.clean_tokens.contains(t)) {
                return Err(CorpusError::Invariant(format!(
                    "title of {} shares no token with its document",
                    d.doc_id
                )));
            }
        }
        for (qid, did) in &self.qrels {
            if !ids.contains(did.as_str()) {
                return Err(CorpusError::Invariant(format!(
                    "qrels target {did} of query {qid} is not in docs"
                )));
            }
            if !self.queries.contains_key(qid) {
                return Err(CorpusError::Invariant(format!(
                    "qrels query {qid} has no query record"
                )));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for qid in self
            .split
            .train
            .iter()
            .chain(&self.split.validation)
            .chain(&self.split.eval)
        {
            if !seen.insert(qid.as_str()) {
                return Err(CorpusError::Invariant(format!(
                    "query {qid} appears in more than one split"
                )));
            }
            if !self.queries.contains_key(qid) {
                return Err(CorpusError::Invariant(format!(
                    "split member {qid} has no query record"
                )));
            }
        }
        for (cond, sets) in &self.nbest {
            for (doc_id, set) in sets {
                if set.doc_id != *doc_id {
                    return Err(CorpusError::Invariant(format!(
                        "nbest key {doc_id} disagrees with set doc_id {} under {cond}",
                        set.doc_id
                    )));
                }
                set.validate()?;
            }
        }
        Ok(())
    }
}
