//! Small trainable transformer encoder.
//!
//! One parameter set serves both retrieval roles: cross-encoder relevance
//! scoring (query and document in one sequence, scored from the CLS
//! vector through an affine head) and dual-encoder dense vectors (CLS
//! vector of a single framed text). Forward passes record traces, the
//! backward pass produces exact gradients, and a finite-difference checker
//! verifies them on every loss path.

mod adamw;
mod backward;
mod checkpoint;
mod forward;
mod gradcheck;
mod input;
mod loss;
mod params;

use thiserror::Error;

pub use adamw::OptimizerState;
pub use backward::backward;
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use forward::{encode_trace, EncodeTrace, Phase};
pub use gradcheck::{grad_check, GradCheckPath, GradCheckReport};
pub use input::{cross_input, embed, fused_input, text_input, ColumnTokens, EmbeddedSeq, InputSpec};
pub use loss::{dr_loss, dr_loss_grad, rerank_loss, rerank_loss_from_logits, sigmoid};
pub use params::{EncoderParams, LayerParams, TensorMut, TensorRef};

use crate::scalar::Scalar;
use crate::text::TokenSeq;
use ndarray::Array1;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("invalid encoder configuration: {0}")]
    Config(String),
    #[error("token id {id} outside vocabulary of size {vocab_size}")]
    Vocab { id: u32, vocab_size: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("non-finite activations in layer {layer}")]
    NonFinite { layer: usize },
    #[error("non-finite gradient in {tensor}")]
    NonFiniteGrad { tensor: String },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Architecture and training-time hyperparameters of the encoder.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    pub dropout_rate: f64,
    pub seed: u64,
}

impl EncoderConfig {
    /// Desk-scale defaults: 2 layers, d_model 64, 4 heads.
    pub fn small(vocab_size: usize, seed: u64) -> Self {
        EncoderConfig {
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            d_ff: 256,
            max_len: 128,
            vocab_size,
            dropout_rate: 0.1,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(EncoderError::Config(format!(
                "d_model ({}) must be a positive multiple of n_heads ({})",
                self.d_model, self.n_heads
            )));
        }
        if self.max_len < 8 {
            return Err(EncoderError::Config(format!(
                "max_len must be at least 8, got {}",
                self.max_len
            )));
        }
        if self.vocab_size == 0 || self.n_layers == 0 || self.d_ff == 0 {
            return Err(EncoderError::Config(
                "vocab_size, n_layers and d_ff must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(EncoderError::Config(format!(
                "dropout_rate must lie in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }
}

/// Inner product of two dense vectors.
pub fn similarity<F: Scalar>(q: &Array1<F>, d: &Array1<F>) -> Result<F, EncoderError> {
    if q.len() != d.len() {
        return Err(EncoderError::Shape(format!(
            "similarity of vectors with lengths {} and {}",
            q.len(),
            d.len()
        )));
    }
    Ok(q.dot(d))
}

/// Cross-encoder relevance score in (0, 1): sigmoid of the affine head
/// over the CLS vector of `[CLS] query [SEP] doc [SEP]`.
pub fn rerank_score<F: Scalar>(
    query: &TokenSeq,
    doc: &TokenSeq,
    params: &EncoderParams<F>,
) -> Result<F, EncoderError> {
    let spec = cross_input(query, doc, params.config.max_len)?;
    let seq = embed(&spec, params)?;
    let trace = encode_trace(&seq, params, Phase::Infer)?;
    let logit = params.rerank_logit(&trace.cls());
    Ok(sigmoid(logit))
}

/// Dense vector of a framed text: CLS output of `[CLS] x [SEP]`, segment 0.
pub fn encode_text<F: Scalar>(
    x: &TokenSeq,
    params: &EncoderParams<F>,
) -> Result<Array1<F>, EncoderError> {
    let spec = text_input(x, params.config.max_len);
    let seq = embed(&spec, params)?;
    Ok(encode_trace(&seq, params, Phase::Infer)?.cls().to_owned())
}

/// Dense vector of an already-embedded sequence (the early-fusion path).
pub fn encode_embedded<F: Scalar>(
    seq: &EmbeddedSeq<F>,
    params: &EncoderParams<F>,
) -> Result<Array1<F>, EncoderError> {
    Ok(encode_trace(seq, params, Phase::Infer)?.cls().to_owned())
}
