//! N-best fusion for dense retrieval.
//!
//! Early fusion averages aligned token embeddings before encoding a single
//! document vector. Late fusion keeps one vector index per hypothesis rank
//! and sums per-document scores at query time.

use std::collections::BTreeSet;

use ndarray::Array1;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::NBestSet;
use crate::encoder::{embed, fused_input, EmbeddedSeq, EncoderError, EncoderParams};
use crate::index::{IndexError, RankedList, VectorIndex, DocInput, nn_search};
use crate::scalar::Scalar;
use crate::text::{align_nbest, tokenize_tokens, AlignedFrame, TokenSeq, TokenSource, Vocabulary};

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("doc_id coverage mismatch under exhaustive scope: {0}")]
    Coverage(String),
    #[error("no indexes given")]
    NoIndexes,
    #[error("invalid fusion configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error("alignment failed: {0}")]
    Alignment(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    Early,
    Late,
}

/// How late fusion collects candidates. The default is exhaustive scoring:
/// at desk scale it is free and avoids the missing-score ambiguity of
/// union-of-top-k lists.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LateScope {
    Exhaustive,
    TopkUnion { topk_per_index: usize },
}

impl Default for LateScope {
    fn default() -> Self {
        LateScope::Exhaustive
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub mode: FusionMode,
    pub n: usize,
    #[serde(default)]
    pub late_score_scope: LateScope,
}

impl FusionConfig {
    pub fn early(n: usize) -> Self {
        FusionConfig {
            mode: FusionMode::Early,
            n,
            late_score_scope: LateScope::Exhaustive,
        }
    }

    pub fn late(n: usize) -> Self {
        FusionConfig {
            mode: FusionMode::Late,
            n,
            late_score_scope: LateScope::Exhaustive,
        }
    }

    pub fn validate(&self) -> Result<(), FusionError> {
        if self.n == 0 {
            return Err(FusionError::Config("n must be at least 1".into()));
        }
        if let LateScope::TopkUnion { topk_per_index } = self.late_score_scope {
            if topk_per_index == 0 {
                return Err(FusionError::Config(
                    "topk_per_index must be at least 1".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Early fusion: embeds an aligned frame as `[CLS] columns [SEP]` with each
/// column's token embeddings averaged. Position and segment embeddings are
/// added once, after averaging.
pub fn early_fuse<F: Scalar>(
    frame: &AlignedFrame,
    params: &EncoderParams<F>,
) -> Result<EmbeddedSeq<F>, FusionError> {
    let spec = fused_input(frame, params.config.max_len);
    Ok(embed(&spec, params)?)
}

/// Builds the early-fusion input for one document: tokenize the top-n
/// hypotheses, align them to the 1-best anchor and frame the result.
/// Returns the fallback text (and a warning flag) when the N-best set is
/// missing, so training and indexing degrade to 1-best instead of failing.
pub fn fused_doc_input(
    nbest: Option<&NBestSet>,
    fallback: &TokenSeq,
    vocab: &Vocabulary,
    n: usize,
) -> Result<(DocInput, bool), FusionError> {
    let Some(set) = nbest else {
        return Ok((DocInput::Text(fallback.clone()), true));
    };
    let take = n.min(set.hypotheses.len()).max(1);
    let hyps: Vec<TokenSeq> = set.hypotheses[..take]
        .iter()
        .enumerate()
        .map(|(k, h)| tokenize_tokens(h, vocab, TokenSource::Hyp(k as u16)))
        .collect();
    let frame = align_nbest(&hyps).map_err(|e| FusionError::Alignment(e.to_string()))?;
    Ok((DocInput::Frame(frame), false))
}

fn index_score<F: Scalar>(index: &VectorIndex<F>, doc_id: &str, q_vec: &Array1<F>) -> Option<f64> {
    let pos = index
        .doc_ids
        .binary_search_by(|d| d.as_str().cmp(doc_id))
        .ok()?;
    Some(index.vectors.row(pos).dot(q_vec).to_f64().expect("finite"))
}

/// Late fusion: final_score(d) = Σ_n sim(q, vec_n(d)) over the N indexes,
/// ranked with the canonical tie-break. Scores are summed in index order.
pub fn late_fuse_search<F: Scalar>(
    indexes: &[&VectorIndex<F>],
    q_vec: &Array1<F>,
    k: usize,
    scope: LateScope,
) -> Result<RankedList, FusionError> {
    if indexes.is_empty() {
        return Err(FusionError::NoIndexes);
    }
    for idx in indexes {
        if q_vec.len() != idx.dim() {
            return Err(FusionError::Index(IndexError::Shape(format!(
                "query dim {} vs index dim {}",
                q_vec.len(),
                idx.dim()
            ))));
        }
    }
    match scope {
        LateScope::Exhaustive => {
            let first = indexes[0];
            for (i, idx) in indexes.iter().enumerate().skip(1) {
                if idx.doc_ids != first.doc_ids {
                    return Err(FusionError::Coverage(format!(
                        "index {i} covers a different doc_id set than index 0"
                    )));
                }
            }
            let mut totals = vec![0.0f64; first.num_docs()];
            for idx in indexes {
                let scores = idx.vectors.dot(q_vec);
                for (t, s) in totals.iter_mut().zip(scores.iter()) {
                    *t += s.to_f64().expect("finite score");
                }
            }
            Ok(RankedList::from_scores(
                "",
                first
                    .doc_ids
                    .iter()
                    .zip(totals)
                    .map(|(d, s)| (d.clone(), s)),
                k,
            ))
        }
        LateScope::TopkUnion { topk_per_index } => {
            let mut union: BTreeSet<String> = BTreeSet::new();
            for idx in indexes {
                let top = nn_search(idx, q_vec, topk_per_index)?;
                union.extend(top.entries.into_iter().map(|(d, _)| d));
            }
            // Union members are scored across all N indexes; a doc absent
            // from some index simply contributes nothing there.
            let scored = union.into_iter().map(|d| {
                let total: f64 = indexes
                    .iter()
                    .filter_map(|idx| index_score(idx, &d, q_vec))
                    .sum();
                (d, total)
            });
            Ok(RankedList::from_scores("", scored, k))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn idx(rows: Vec<[f64; 2]>, tag: &str) -> VectorIndex<f64> {
        let n = rows.len();
        let mut m = ndarray::Array2::<f64>::zeros((n, 2));
        for (i, r) in rows.iter().enumerate() {
            m[[i, 0]] = r[0];
            m[[i, 1]] = r[1];
        }
        VectorIndex::from_rows(
            (0..n).map(|i| format!("d{i:02}")).collect(),
            m,
            tag.to_string(),
        )
        .unwrap()
    }

    #[test]
    fn n_copies_scale_scores_and_preserve_ranking() {
        let a = idx(vec![[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]], "h0");
        let q = array![2.0, 1.0];
        let single = nn_search(&a, &q, 3).unwrap();
        let fused = late_fuse_search(&[&a, &a, &a], &q, 3, LateScope::Exhaustive).unwrap();
        let order_single: Vec<&str> = single.entries.iter().map(|(d, _)| d.as_str()).collect();
        let order_fused: Vec<&str> = fused.entries.iter().map(|(d, _)| d.as_str()).collect();
        assert_eq!(order_single, order_fused);
        for ((_, s1), (_, s3)) in single.entries.iter().zip(fused.entries.iter()) {
            assert!((s3 - 3.0 * s1).abs() / s3.abs().max(1e-12) < 1e-6);
        }
    }

    #[test]
    fn single_index_equals_nn_search() {
        let a = idx(vec![[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]], "h0");
        let q = array![0.3, -0.9];
        let single = nn_search(&a, &q, 3).unwrap();
        let fused = late_fuse_search(&[&a], &q, 3, LateScope::Exhaustive).unwrap();
        assert_eq!(single.entries, fused.entries);
    }

    #[test]
    fn hand_example_two_indexes_three_docs() {
        // Hand arithmetic with q = [1, 2]:
        //   index A rows: d0=[1,0] → 1, d1=[0,1] → 2, d2=[1,1] → 3
        //   index B rows: d0=[2,1] → 4, d1=[1,0] → 1, d2=[0,0] → 0
        //   sums: d0=5, d1=3, d2=3 → ranking d0, d1, d2 (tie by id)
        let a = idx(vec![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]], "h0");
        let b = idx(vec![[2.0, 1.0], [1.0, 0.0], [0.0, 0.0]], "h1");
        let q = array![1.0, 2.0];
        let fused = late_fuse_search(&[&a, &b], &q, 3, LateScope::Exhaustive).unwrap();
        assert_eq!(
            fused.entries,
            vec![
                ("d00".to_string(), 5.0),
                ("d01".to_string(), 3.0),
                ("d02".to_string(), 3.0),
            ]
        );
    }

    #[test]
    fn index_permutation_does_not_change_the_result() {
        let a = idx(vec![[1.0, 0.2], [0.3, 1.0], [0.5, 0.5]], "h0");
        let b = idx(vec![[0.1, 0.9], [1.0, 0.4], [0.2, 0.2]], "h1");
        let c = idx(vec![[0.6, 0.6], [0.0, 0.3], [0.9, 0.1]], "h2");
        let q = array![0.7, 1.3];
        let abc = late_fuse_search(&[&a, &b, &c], &q, 3, LateScope::Exhaustive).unwrap();
        let cba = late_fuse_search(&[&c, &b, &a], &q, 3, LateScope::Exhaustive).unwrap();
        let order_abc: Vec<&str> = abc.entries.iter().map(|(d, _)| d.as_str()).collect();
        let order_cba: Vec<&str> = cba.entries.iter().map(|(d, _)| d.as_str()).collect();
        assert_eq!(order_abc, order_cba);
        for ((_, x), (_, y)) in abc.entries.iter().zip(cba.entries.iter()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn coverage_mismatch_is_an_error() {
        let a = idx(vec![[1.0, 0.0], [0.0, 1.0]], "h0");
        let mut b = idx(vec![[1.0, 0.0], [0.0, 1.0]], "h1");
        b.doc_ids[1] = "dx".into();
        let q = array![1.0, 0.0];
        assert!(matches!(
            late_fuse_search(&[&a, &b], &q, 2, LateScope::Exhaustive),
            Err(FusionError::Coverage(_))
        ));
    }

    #[test]
    fn topk_union_matches_exhaustive_when_candidates_cover_topk() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let make = |rng: &mut rand_chacha::ChaCha8Rng, tag: &str| {
            let rows: Vec<[f64; 2]> =
                (0..30).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
            idx(rows, tag)
        };
        let a = make(&mut rng, "h0");
        let b = make(&mut rng, "h1");
        for _ in 0..20 {
            let q = array![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let ex = late_fuse_search(&[&a, &b], &q, 5, LateScope::Exhaustive).unwrap();
            // Per-index candidate depth equal to the corpus makes coverage
            // certain, so the two scopes must agree exactly.
            let un = late_fuse_search(
                &[&a, &b],
                &q,
                5,
                LateScope::TopkUnion { topk_per_index: 30 },
            )
            .unwrap();
            assert_eq!(ex.entries.len(), un.entries.len());
            for ((d1, s1), (d2, s2)) in ex.entries.iter().zip(un.entries.iter()) {
                assert_eq!(d1, d2);
                assert!((s1 - s2).abs() < 1e-12);
            }
        }
    }
}
