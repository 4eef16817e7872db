//! Re-ranker and dense-retrieval training with validation-based checkpoint
//! selection and epoch-wise ANCE negative refresh.
//!
//! Batches run in a fixed number of parallel chunks whose gradients merge
//! in chunk order, so a given seed reproduces the training trajectory
//! bit-for-bit regardless of thread count.

use std::collections::{BTreeMap, HashMap};
use std::time::Instant;

use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::CorpusBundle;
use crate::encoder::{
    backward, cross_input, embed, encode_trace, rerank_loss_from_logits, text_input,
    CheckpointMeta, EncodeTrace, EncoderConfig, EncoderParams, OptimizerState, Phase,
    dr_loss_grad,
};
use crate::index::{
    build_bm25, build_vector_index, encode_doc_input, nn_search, DocInput, RankedList,
};
use crate::scalar::{fl, Scalar};
use crate::text::TokenSeq;

use super::negatives::{
    mine_bm25_negatives, mint_dr_validation, mint_rerank_validation, random_negatives,
    DrValCase, RerankValCase, TrainExample,
};
use super::search::{doc_inputs_fused, doc_inputs_text};
use super::{PipelineError, PreparedCorpus};

/// Paper hyperparameter presets.
pub const PAPER_LR_RERANK: f64 = 3e-7;
pub const PAPER_LR_DR: f64 = 1e-5;
pub const PAPER_EPOCHS_RERANK: usize = 20;
pub const PAPER_EPOCHS_DR: usize = 10;
/// Desk-scale defaults for training from random initialization.
pub const DESK_LR_RERANK: f64 = 1e-3;
pub const DESK_LR_DR: f64 = 5e-4;

/// Fixed gradient-chunk count; merging in chunk order keeps training
/// deterministic across thread counts.
const GRAD_CHUNKS: usize = 8;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub encoder: EncoderConfig,
    pub epochs: usize,
    pub learning_rate: f64,
    /// AdamW decoupled weight decay.
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Negative examples per query (J).
    pub negatives: usize,
    /// Seed for shuffles and sampling (the encoder seed governs init).
    pub seed: u64,
    /// Transcript condition the documents are drawn from.
    pub condition: String,
    /// Epoch-wise ANCE negative refresh (dense retrieval only).
    pub ance: bool,
    /// Candidate pool depth per query for ANCE sampling.
    pub ance_pool: usize,
    /// Early fusion width; `None` trains on plain 1-best text.
    pub fusion_n: Option<usize>,
    /// Irrelevant candidates per dense-retrieval validation query.
    pub dr_val_candidates: usize,
}

impl TrainConfig {
    pub fn rerank(encoder: EncoderConfig, condition: impl Into<String>) -> Self {
        TrainConfig {
            seed: encoder.seed,
            encoder,
            epochs: PAPER_EPOCHS_RERANK,
            learning_rate: DESK_LR_RERANK,
            weight_decay: 5e-5,
            batch_size: 16,
            negatives: 20,
            condition: condition.into(),
            ance: false,
            ance_pool: 200,
            fusion_n: None,
            dr_val_candidates: 99,
        }
    }

    pub fn dr(encoder: EncoderConfig, condition: impl Into<String>, ance: bool) -> Self {
        TrainConfig {
            seed: encoder.seed,
            encoder,
            epochs: PAPER_EPOCHS_DR,
            learning_rate: DESK_LR_DR,
            weight_decay: 5e-5,
            batch_size: 16,
            negatives: 20,
            condition: condition.into(),
            ance,
            ance_pool: 200,
            fusion_n: None,
            dr_val_candidates: 99,
        }
    }

    fn validate(&self) -> Result<(), PipelineError> {
        if self.epochs == 0 || self.batch_size == 0 || self.negatives == 0 {
            return Err(PipelineError::Config(
                "epochs, batch_size and negatives must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Checkpoint metadata describing this run.
    pub fn meta(&self, model: &str, best_metric: Option<f64>) -> CheckpointMeta {
        CheckpointMeta {
            model: model.to_string(),
            fusion_mode: if self.fusion_n.is_some() { "early" } else { "none" }.to_string(),
            fusion_n: self.fusion_n.unwrap_or(1),
            condition: self.condition.clone(),
            seed: self.encoder.seed,
            best_metric,
            extra: BTreeMap::from([
                ("ance".to_string(), self.ance.to_string()),
                ("learning_rate".to_string(), self.learning_rate.to_string()),
                ("epochs".to_string(), self.epochs.to_string()),
            ]),
        }
    }
}

/// Where the current negative pool came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NegativeProvenance {
    Bm25,
    Ance { epoch: usize },
}

impl std::fmt::Display for NegativeProvenance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NegativeProvenance::Bm25 => write!(f, "bm25"),
            NegativeProvenance::Ance { epoch } => write!(f, "ance@{epoch}"),
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_metric: f64,
    pub negative_pool: String,
    pub wall_secs: f64,
}

/// Training outcome: the final parameters plus the best checkpoint by
/// validation metric (minimum loss for the re-ranker, maximum MRR for
/// dense retrieval).
pub struct TrainState<F> {
    pub params: EncoderParams<F>,
    pub optimizer: OptimizerState<F>,
    pub epoch: usize,
    pub best_params: EncoderParams<F>,
    pub best_metric: f64,
    pub best_epoch: usize,
    pub seed: u64,
    pub provenance: NegativeProvenance,
    pub log: Vec<EpochLog>,
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

fn seeded_shuffle<T>(items: &mut [T], seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i);
        items.swap(i, j);
    }
}

/// Encodes a sequence, with dropout when a training RNG is supplied.
fn run_encoder<F: Scalar>(
    spec: &crate::encoder::InputSpec,
    params: &EncoderParams<F>,
    dropout: f64,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<EncodeTrace<F>, PipelineError> {
    let seq = embed(spec, params)?;
    let trace = match rng {
        Some(rng) if dropout > 0.0 => encode_trace(
            &seq,
            params,
            Phase::Train {
                dropout_rate: dropout,
                rng,
            },
        )?,
        _ => encode_trace(&seq, params, Phase::Infer)?,
    };
    Ok(trace)
}

fn doc_spec<F: Scalar>(
    input: &DocInput,
    params: &EncoderParams<F>,
) -> crate::encoder::InputSpec {
    match input {
        DocInput::Text(seq) => text_input(seq, params.config.max_len),
        DocInput::Frame(frame) => crate::encoder::fused_input(frame, params.config.max_len),
    }
}

/// Forward + backward for one re-ranker example. Returns the example loss.
fn rerank_example<F: Scalar>(
    query: &TokenSeq,
    example: &TrainExample,
    docs: &BTreeMap<String, TokenSeq>,
    params: &EncoderParams<F>,
    dropout: f64,
    rng: &mut ChaCha8Rng,
    grads: &mut EncoderParams<F>,
) -> Result<f64, PipelineError> {
    let doc = |id: &str| {
        docs.get(id)
            .ok_or_else(|| PipelineError::Config(format!("doc {id} not prepared")))
    };
    let pos_spec = cross_input(query, doc(&example.positive_doc_id)?, params.config.max_len)?;
    let pos_trace = run_encoder(&pos_spec, params, dropout, Some(rng))?;
    let mut neg_traces = Vec::with_capacity(example.negative_doc_ids.len());
    for id in &example.negative_doc_ids {
        let spec = cross_input(query, doc(id)?, params.config.max_len)?;
        neg_traces.push(run_encoder(&spec, params, dropout, Some(rng))?);
    }
    let pos_logit = params.rerank_logit(&pos_trace.cls());
    let neg_logits: Vec<F> = neg_traces
        .iter()
        .map(|t| params.rerank_logit(&t.cls()))
        .collect();
    let (loss, d_pos, d_negs) = rerank_loss_from_logits(pos_logit, &neg_logits);
    for (trace, d_logit) in std::iter::once((&pos_trace, d_pos))
        .chain(neg_traces.iter().zip(d_negs.into_iter()))
    {
        let cls = trace.cls().to_owned();
        grads.rerank_w.scaled_add(d_logit, &cls);
        grads.rerank_b[0] += d_logit;
        let d_cls: Array1<F> = params.rerank_w.mapv(|w| w * d_logit);
        let mut d_out = ndarray::Array2::<F>::zeros(trace.output.raw_dim());
        d_out.row_mut(0).assign(&d_cls);
        backward(trace, d_out, params, grads);
    }
    Ok(loss.to_f64().expect("finite loss"))
}

/// Forward + backward for one dense-retrieval example.
fn dr_example<F: Scalar>(
    query: &TokenSeq,
    example: &TrainExample,
    inputs: &BTreeMap<String, DocInput>,
    params: &EncoderParams<F>,
    dropout: f64,
    rng: &mut ChaCha8Rng,
    grads: &mut EncoderParams<F>,
) -> Result<f64, PipelineError> {
    let input = |id: &str| {
        inputs
            .get(id)
            .ok_or_else(|| PipelineError::Config(format!("doc {id} not prepared")))
    };
    let q_spec = text_input(query, params.config.max_len);
    let q_trace = run_encoder(&q_spec, params, dropout, Some(rng))?;
    let q_vec = q_trace.cls().to_owned();

    let pos_trace = run_encoder(
        &doc_spec(input(&example.positive_doc_id)?, params),
        params,
        dropout,
        Some(rng),
    )?;
    let pos_vec = pos_trace.cls().to_owned();
    let mut neg_traces = Vec::with_capacity(example.negative_doc_ids.len());
    let mut neg_vecs = Vec::with_capacity(example.negative_doc_ids.len());
    for id in &example.negative_doc_ids {
        let t = run_encoder(&doc_spec(input(id)?, params), params, dropout, Some(rng))?;
        neg_vecs.push(t.cls().to_owned());
        neg_traces.push(t);
    }
    let pos_sim = q_vec.dot(&pos_vec);
    let neg_sims: Vec<F> = neg_vecs.iter().map(|v| q_vec.dot(v)).collect();
    let (loss, d_pos, d_negs) = dr_loss_grad(pos_sim, &neg_sims);

    let mut d_q = pos_vec.mapv(|v| v * d_pos);
    for (v, c) in neg_vecs.iter().zip(d_negs.iter()) {
        d_q.scaled_add(*c, v);
    }
    let push = |trace: &EncodeTrace<F>, d_cls: Array1<F>, grads: &mut EncoderParams<F>| {
        let mut d_out = ndarray::Array2::<F>::zeros(trace.output.raw_dim());
        d_out.row_mut(0).assign(&d_cls);
        backward(trace, d_out, params, grads);
    };
    push(&q_trace, d_q, grads);
    push(&pos_trace, q_vec.mapv(|v| v * d_pos), grads);
    for (t, c) in neg_traces.iter().zip(d_negs.iter()) {
        push(t, q_vec.mapv(|v| v * *c), grads);
    }
    Ok(loss.to_f64().expect("finite loss"))
}

/// Runs one optimizer step over a batch: examples are processed in
/// GRAD_CHUNKS fixed contiguous chunks in parallel, each accumulating into
/// its own gradient buffer; buffers merge in chunk order and the mean
/// gradient is applied.
#[allow(clippy::too_many_arguments)]
fn batch_step<F: Scalar, Fwd>(
    examples: &[&TrainExample],
    params: &mut EncoderParams<F>,
    optimizer: &mut OptimizerState<F>,
    step_seed: u64,
    dropout: f64,
    pass: Fwd,
) -> Result<f64, PipelineError>
where
    Fwd: Fn(&TrainExample, f64, &mut ChaCha8Rng, &EncoderParams<F>, &mut EncoderParams<F>) -> Result<f64, PipelineError>
        + Sync,
{
    let n = examples.len();
    let chunks = GRAD_CHUNKS.min(n.max(1));
    let bounds: Vec<(usize, usize)> = (0..chunks)
        .map(|c| (c * n / chunks, (c + 1) * n / chunks))
        .collect();
    let frozen: &EncoderParams<F> = params;
    let partials: Result<Vec<(f64, EncoderParams<F>)>, PipelineError> = bounds
        .par_iter()
        .map(|&(lo, hi)| {
            let mut grads = frozen.zeros_like();
            let mut loss = 0.0;
            for idx in lo..hi {
                let mut rng = ChaCha8Rng::seed_from_u64(splitmix(step_seed, idx as u64));
                loss += pass(examples[idx], dropout, &mut rng, frozen, &mut grads)?;
            }
            Ok((loss, grads))
        })
        .collect();
    let partials = partials?;
    let mut total_loss = 0.0;
    let mut grads = params.zeros_like();
    for (loss, g) in &partials {
        total_loss += loss;
        grads.add_in_place(g);
    }
    if !total_loss.is_finite() {
        return Err(PipelineError::Diverged(format!(
            "non-finite batch loss {total_loss}"
        )));
    }
    grads.scale_in_place(fl::<F>(1.0 / n as f64));
    optimizer
        .step(params, &grads)
        .map_err(|e| PipelineError::Diverged(e.to_string()))?;
    Ok(total_loss / n as f64)
}

/// Mean validation cross-entropy of the re-ranker over the frozen cases.
fn rerank_validation_loss<F: Scalar>(
    cases: &[RerankValCase],
    queries: &BTreeMap<String, TokenSeq>,
    docs: &BTreeMap<String, TokenSeq>,
    params: &EncoderParams<F>,
) -> Result<f64, PipelineError> {
    let losses: Result<Vec<f64>, PipelineError> = cases
        .par_iter()
        .map(|case| {
            let query = queries
                .get(&case.query_id)
                .ok_or_else(|| PipelineError::Config(format!("query {}", case.query_id)))?;
            let logit = |doc_id: &str| -> Result<F, PipelineError> {
                let doc = docs
                    .get(doc_id)
                    .ok_or_else(|| PipelineError::Config(format!("doc {doc_id}")))?;
                let spec = cross_input(query, doc, params.config.max_len)?;
                let trace = run_encoder(&spec, params, 0.0, None)?;
                Ok(params.rerank_logit(&trace.cls()))
            };
            let pos = logit(&case.positive_doc_id)?;
            let neg = logit(&case.negative_doc_id)?;
            Ok(rerank_loss_from_logits(pos, &[neg]).0.to_f64().expect("finite"))
        })
        .collect();
    let losses = losses?;
    Ok(losses.iter().sum::<f64>() / losses.len().max(1) as f64)
}

/// Validation MRR of dense retrieval over the frozen candidate sets.
fn dr_validation_mrr<F: Scalar>(
    cases: &[DrValCase],
    queries: &BTreeMap<String, TokenSeq>,
    inputs: &BTreeMap<String, DocInput>,
    params: &EncoderParams<F>,
) -> Result<f64, PipelineError> {
    // Encode the union of candidate documents once per validation pass.
    let mut wanted: Vec<&str> = Vec::new();
    for case in cases {
        wanted.push(&case.positive_doc_id);
        wanted.extend(case.negative_doc_ids.iter().map(String::as_str));
    }
    wanted.sort_unstable();
    wanted.dedup();
    let encoded: Result<Vec<(&str, Array1<F>)>, PipelineError> = wanted
        .par_iter()
        .map(|doc_id| {
            let input = inputs
                .get(*doc_id)
                .ok_or_else(|| PipelineError::Config(format!("doc {doc_id} not prepared")))?;
            let v = encode_doc_input(input, params)?;
            Ok((*doc_id, v))
        })
        .collect();
    let doc_vecs: HashMap<&str, Array1<F>> = encoded?.into_iter().collect();

    let rrs: Result<Vec<f64>, PipelineError> = cases
        .par_iter()
        .map(|case| {
            let query = queries
                .get(&case.query_id)
                .ok_or_else(|| PipelineError::Config(format!("query {}", case.query_id)))?;
            let q_spec = text_input(query, params.config.max_len);
            let q_vec = run_encoder(&q_spec, params, 0.0, None)?.cls().to_owned();
            let scored = std::iter::once(&case.positive_doc_id)
                .chain(case.negative_doc_ids.iter())
                .map(|d| {
                    let s = doc_vecs[d.as_str()].dot(&q_vec);
                    (d.clone(), s.to_f64().expect("finite"))
                });
            let ranked = RankedList::from_scores("", scored, case.negative_doc_ids.len() + 1);
            let rr = ranked
                .rank_of(&case.positive_doc_id)
                .map(|r| 1.0 / r as f64)
                .unwrap_or(0.0);
            Ok(rr)
        })
        .collect();
    let rrs = rrs?;
    Ok(rrs.iter().sum::<f64>() / rrs.len().max(1) as f64)
}

/// Rebuilds the negative pool from the model being trained: encode the
/// collection, take the top `ance_pool` neighbors per training query,
/// drop the positive and sample J uniformly without replacement.
fn ance_refresh<F: Scalar>(
    bundle: &CorpusBundle,
    prepared: &PreparedCorpus,
    inputs: &BTreeMap<String, DocInput>,
    params: &EncoderParams<F>,
    config: &TrainConfig,
    bm25_examples: &[TrainExample],
    epoch: usize,
) -> Result<Vec<TrainExample>, PipelineError> {
    let index = build_vector_index(inputs, params, format!("ance@{epoch}"))?;
    let all_docs: Vec<String> = bundle.docs.iter().map(|d| d.doc_id.clone()).collect();
    let by_query: HashMap<&str, &TrainExample> = bm25_examples
        .iter()
        .map(|e| (e.query_id.as_str(), e))
        .collect();
    let j = config.negatives;

    let refreshed: Result<Vec<TrainExample>, PipelineError> = bundle
        .split
        .train
        .par_iter()
        .map(|query_id| {
            let positive = bundle
                .qrels
                .get(query_id)
                .ok_or_else(|| PipelineError::Config(format!("query {query_id} has no qrel")))?
                .clone();
            let query = prepared.query(query_id)?;
            let q_spec = text_input(query, params.config.max_len);
            let q_vec = run_encoder(&q_spec, params, 0.0, None)?.cls().to_owned();
            let top = nn_search(&index, &q_vec, config.ance_pool + 1)?;
            let mut pool: Vec<String> = top
                .entries
                .into_iter()
                .map(|(d, _)| d)
                .filter(|d| *d != positive)
                .take(config.ance_pool)
                .collect();
            let mut rng = ChaCha8Rng::seed_from_u64(splitmix(
                splitmix(config.seed, epoch as u64),
                fnv1a(query_id),
            ));
            let mut negatives: Vec<String> = if pool.len() >= j {
                // Partial Fisher-Yates: the first J entries are a uniform
                // sample without replacement.
                for i in 0..j {
                    let pick = rng.gen_range(i..pool.len());
                    pool.swap(i, pick);
                }
                pool.truncate(j);
                pool
            } else {
                pool
            };
            if negatives.len() < j {
                // Top up from the BM25 pool, then randomly.
                if let Some(base) = by_query.get(query_id.as_str()) {
                    for d in &base.negative_doc_ids {
                        if negatives.len() >= j {
                            break;
                        }
                        if !negatives.contains(d) && *d != positive {
                            negatives.push(d.clone());
                        }
                    }
                }
                if negatives.len() < j {
                    let pad = random_negatives(
                        &all_docs,
                        &positive,
                        &negatives,
                        j - negatives.len(),
                        &mut rng,
                    );
                    negatives.extend(pad);
                }
            }
            let example = TrainExample {
                query_id: query_id.clone(),
                positive_doc_id: positive,
                negative_doc_ids: negatives,
                epoch_minted: epoch,
            };
            example.validate(j)?;
            Ok(example)
        })
        .collect();
    refreshed
}

/// Trains the cross-encoder re-ranker: Eq.-style binary cross-entropy over
/// one positive and J negatives per query, epoch-shuffled, with the best
/// checkpoint selected by validation loss.
pub fn train_reranker<F: Scalar>(
    bundle: &CorpusBundle,
    prepared: &PreparedCorpus,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainState<F>, PipelineError> {
    config.validate()?;
    if config.ance {
        return Err(PipelineError::Config(
            "ANCE refresh applies to dense retrieval, not the re-ranker".into(),
        ));
    }
    if config.fusion_n.is_some() {
        return Err(PipelineError::Config(
            "early fusion applies to dense retrieval, not the re-ranker".into(),
        ));
    }
    let docs = prepared.condition_docs(&config.condition)?.clone();
    let bm25 = build_bm25(&docs)?;
    let mut examples = mine_bm25_negatives(bundle, prepared, &bm25, config.negatives, config.seed)?;
    let val_cases = mint_rerank_validation(bundle, prepared, &bm25, config.seed)?;

    let mut params = EncoderParams::<F>::init(&config.encoder)?;
    let mut optimizer =
        OptimizerState::new(&params, config.learning_rate, config.weight_decay);
    let mut best_params = params.clone();
    let mut best_metric = f64::INFINITY;
    let mut best_epoch = 0;
    let mut log = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let started = Instant::now();
        seeded_shuffle(&mut examples, splitmix(config.seed, epoch as u64));
        let mut loss_acc = 0.0;
        let mut batches = 0usize;
        for (batch_no, batch) in examples.chunks(config.batch_size).enumerate() {
            let refs: Vec<&TrainExample> = batch.iter().collect();
            let step_seed = splitmix(splitmix(config.seed, epoch as u64), batch_no as u64);
            let docs_ref = &docs;
            let queries_ref = &prepared.queries;
            let loss = batch_step(
                &refs,
                &mut params,
                &mut optimizer,
                step_seed,
                config.encoder.dropout_rate,
                |example, dropout, rng, frozen, grads| {
                    let query = queries_ref.get(&example.query_id).ok_or_else(|| {
                        PipelineError::Config(format!("query {}", example.query_id))
                    })?;
                    rerank_example(query, example, docs_ref, frozen, dropout, rng, grads)
                },
            )?;
            loss_acc += loss;
            batches += 1;
        }
        let val_metric =
            rerank_validation_loss(&val_cases, &prepared.queries, &docs, &params)?;
        if val_metric < best_metric {
            best_metric = val_metric;
            best_params = params.clone();
            best_epoch = epoch;
        }
        let entry = EpochLog {
            epoch,
            train_loss: loss_acc / batches.max(1) as f64,
            val_metric,
            negative_pool: NegativeProvenance::Bm25.to_string(),
            wall_secs: started.elapsed().as_secs_f64(),
        };
        on_epoch(&entry);
        log.push(entry);
    }

    Ok(TrainState {
        params,
        optimizer,
        epoch: config.epochs,
        best_params,
        best_metric,
        best_epoch,
        seed: config.seed,
        provenance: NegativeProvenance::Bm25,
        log,
    })
}

/// Trains the dual-encoder dense retriever: softmax NLL over one positive
/// and J negatives, optional epoch-boundary ANCE refresh, best checkpoint
/// by validation MRR. With `fusion_n` set, documents are embedded through
/// aligned N-best frames in both training and validation.
pub fn train_dr<F: Scalar>(
    bundle: &CorpusBundle,
    prepared: &PreparedCorpus,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainState<F>, PipelineError> {
    config.validate()?;
    let docs = prepared.condition_docs(&config.condition)?.clone();
    let bm25 = build_bm25(&docs)?;
    let inputs = match config.fusion_n {
        Some(n) => doc_inputs_fused(bundle, prepared, &config.condition, n)?.0,
        None => doc_inputs_text(prepared, &config.condition)?,
    };
    let bm25_examples =
        mine_bm25_negatives(bundle, prepared, &bm25, config.negatives, config.seed)?;
    let val_cases = mint_dr_validation(
        bundle,
        prepared,
        &bm25,
        config.dr_val_candidates,
        config.seed,
    )?;

    let mut params = EncoderParams::<F>::init(&config.encoder)?;
    let mut optimizer =
        OptimizerState::new(&params, config.learning_rate, config.weight_decay);
    let mut best_params = params.clone();
    let mut best_metric = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut log = Vec::with_capacity(config.epochs);
    let mut provenance = NegativeProvenance::Bm25;
    // Epoch 0 trains on the BM25 pool; refresh swaps it at each boundary.
    let mut examples = bm25_examples.clone();

    for epoch in 0..config.epochs {
        let started = Instant::now();
        seeded_shuffle(&mut examples, splitmix(config.seed, epoch as u64));
        let mut loss_acc = 0.0;
        let mut batches = 0usize;
        for (batch_no, batch) in examples.chunks(config.batch_size).enumerate() {
            let refs: Vec<&TrainExample> = batch.iter().collect();
            let step_seed = splitmix(splitmix(config.seed, epoch as u64), batch_no as u64);
            let inputs_ref = &inputs;
            let queries_ref = &prepared.queries;
            let loss = batch_step(
                &refs,
                &mut params,
                &mut optimizer,
                step_seed,
                config.encoder.dropout_rate,
                |example, dropout, rng, frozen, grads| {
                    let query = queries_ref.get(&example.query_id).ok_or_else(|| {
                        PipelineError::Config(format!("query {}", example.query_id))
                    })?;
                    dr_example(query, example, inputs_ref, frozen, dropout, rng, grads)
                },
            )?;
            loss_acc += loss;
            batches += 1;
        }
        let val_metric = dr_validation_mrr(&val_cases, &prepared.queries, &inputs, &params)?;
        if val_metric > best_metric {
            best_metric = val_metric;
            best_params = params.clone();
            best_epoch = epoch;
        }
        let entry = EpochLog {
            epoch,
            train_loss: loss_acc / batches.max(1) as f64,
            val_metric,
            negative_pool: provenance.to_string(),
            wall_secs: started.elapsed().as_secs_f64(),
        };
        on_epoch(&entry);
        log.push(entry);

        if config.ance && epoch + 1 < config.epochs {
            let next = epoch + 1;
            examples = ance_refresh(
                bundle,
                prepared,
                &inputs,
                &params,
                config,
                &bm25_examples,
                next,
            )?;
            provenance = NegativeProvenance::Ance { epoch: next };
        }
    }

    Ok(TrainState {
        params,
        optimizer,
        epoch: config.epochs,
        best_params,
        best_metric,
        best_epoch,
        seed: config.seed,
        provenance,
        log,
    })
}
