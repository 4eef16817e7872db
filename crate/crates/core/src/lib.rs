//! Desk-scale spoken-content retrieval engine.
//!
//! The crate covers the full loop of a known-item search experiment over
//! noisy transcripts: synthetic corpus generation with a WER-calibrated
//! token-edit channel ([`corpus`]), tokenization and N-best alignment
//! ([`text`]), a small trainable transformer encoder with exact backprop
//! ([`encoder`]), BM25 and exact inner-product indexes ([`index`]), N-best
//! early/late fusion ([`fusion`]), training and search orchestration
//! ([`pipeline`]), and MRR evaluation with paired significance testing
//! ([`eval`]).
//!
//! Numeric kernels are generic over [`Scalar`] (`f32` or `f64`). The fast
//! [`Real`] = `f32` path is used for training, indexing and search; `f64`
//! backs gradient verification and statistics.

pub mod corpus;
pub mod encoder;
pub mod eval;
pub mod fusion;
pub mod index;
pub mod pipeline;
pub mod scalar;
pub mod text;

pub use scalar::{fl, Scalar};

/// Default working precision for training, indexing and search.
pub type Real = f32;

/// Precision used for gradient checks and statistical computations.
pub type Verify = f64;
