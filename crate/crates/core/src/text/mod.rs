//! Tokenization, vocabulary management and N-best alignment.
//!
//! Alignment operates on token ids only: there is no raw-string alignment
//! path, so tokenize-then-align ordering is enforced by the types.

mod align;
mod vocab;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use align::{align_nbest, align_pair, truncate_frame, AlignOp, AlignedFrame};
pub use vocab::{build_vocab, tokenize, tokenize_tokens, Vocabulary};

/// Reserved special token ids.
pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const CLS: u32 = 2;
pub const SEP: u32 = 3;
/// Alignment gap filler; surface form `---`.
pub const FILLER: u32 = 4;
pub const NUM_SPECIALS: usize = 5;

#[derive(Debug, Error)]
pub enum TextError {
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error("vocabulary file is malformed at line {line}: {message}")]
    VocabFile { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Provenance of a token sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TokenSource {
    Clean,
    /// k-th ranked hypothesis (0 = 1-best).
    Hyp(u16),
    Query,
}

/// A sequence of vocabulary ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSeq {
    pub ids: Vec<u32>,
    pub source: TokenSource,
}

impl TokenSeq {
    pub fn new(ids: Vec<u32>, source: TokenSource) -> Self {
        TokenSeq { ids, source }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}
