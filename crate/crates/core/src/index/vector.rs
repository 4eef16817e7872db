//! Dense document vectors with exact inner-product top-k search.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use rayon::prelude::*;

use crate::encoder::{embed, encode_trace, fused_input, text_input, EncoderParams, Phase};
use crate::scalar::Scalar;
use crate::text::{AlignedFrame, TokenSeq};

use super::{IndexError, RankedList};

/// Ordered document vectors; rows follow `doc_ids`, which is ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex<F> {
    pub doc_ids: Vec<String>,
    pub vectors: Array2<F>,
    /// Which transcript condition produced the vectors, e.g. `clean`,
    /// `std:hyp0`, `std:early@20`.
    pub source_tag: String,
}

impl<F: Scalar> VectorIndex<F> {
    pub fn num_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn from_rows(
        doc_ids: Vec<String>,
        vectors: Array2<F>,
        source_tag: impl Into<String>,
    ) -> Result<Self, IndexError> {
        if doc_ids.len() != vectors.nrows() {
            return Err(IndexError::Shape(format!(
                "{} doc ids for {} vector rows",
                doc_ids.len(),
                vectors.nrows()
            )));
        }
        if doc_ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(IndexError::Format(
                "doc_ids must be strictly ascending".into(),
            ));
        }
        Ok(VectorIndex {
            doc_ids,
            vectors,
            source_tag: source_tag.into(),
        })
    }
}

/// Document text fed to the encoder: plain tokens, or an aligned N-best
/// frame whose token embeddings are averaged (early fusion).
#[derive(Debug, Clone)]
pub enum DocInput {
    Text(TokenSeq),
    Frame(AlignedFrame),
}

/// Encodes one document input into its dense vector.
pub fn encode_doc_input<F: Scalar>(
    input: &DocInput,
    params: &EncoderParams<F>,
) -> Result<Array1<F>, crate::encoder::EncoderError> {
    let spec = match input {
        DocInput::Text(seq) => text_input(seq, params.config.max_len),
        DocInput::Frame(frame) => fused_input(frame, params.config.max_len),
    };
    let seq = embed(&spec, params)?;
    Ok(encode_trace(&seq, params, Phase::Infer)?.cls().to_owned())
}

/// Encodes one document per entry of `docs` (ascending doc_id order) into
/// a vector index. Documents are encoded in parallel; rows land at their
/// precomputed positions, so the result is deterministic.
pub fn build_vector_index<F: Scalar>(
    docs: &BTreeMap<String, DocInput>,
    params: &EncoderParams<F>,
    source_tag: impl Into<String>,
) -> Result<VectorIndex<F>, IndexError> {
    if docs.is_empty() {
        return Err(IndexError::Empty("no documents to encode".into()));
    }
    let entries: Vec<(&String, &DocInput)> = docs.iter().collect();
    let rows: Result<Vec<Array1<F>>, IndexError> = entries
        .par_iter()
        .map(|(doc_id, input)| {
            encode_doc_input(input, params).map_err(|e| IndexError::Encoding {
                doc_id: (*doc_id).clone(),
                message: e.to_string(),
            })
        })
        .collect();
    let rows = rows?;
    let d = params.config.d_model;
    let mut vectors = Array2::<F>::zeros((rows.len(), d));
    for (i, row) in rows.iter().enumerate() {
        vectors.row_mut(i).assign(row);
    }
    VectorIndex::from_rows(
        entries.into_iter().map(|(id, _)| id.clone()).collect(),
        vectors,
        source_tag,
    )
}

/// Exact top-k by inner product with the canonical tie-break. This is a
/// full scan of the vector matrix; at desk scale exactness is free.
pub fn nn_search<F: Scalar>(
    index: &VectorIndex<F>,
    q_vec: &Array1<F>,
    k: usize,
) -> Result<RankedList, IndexError> {
    if q_vec.len() != index.dim() {
        return Err(IndexError::Shape(format!(
            "query dim {} vs index dim {}",
            q_vec.len(),
            index.dim()
        )));
    }
    let scores = index.vectors.dot(q_vec);
    Ok(RankedList::from_scores(
        "",
        index
            .doc_ids
            .iter()
            .zip(scores.iter())
            .map(|(d, s)| (d.clone(), s.to_f64().expect("finite score"))),
        k,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn hand_index() -> VectorIndex<f64> {
        // 5 docs × 4 dims, written out by hand.
        let vectors = array![
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 2.0, 0.0, 0.0],
            [0.5, 0.5, 0.5, 0.5],
            [-1.0, 0.0, 1.0, 0.0],
            [0.1, 0.2, 0.3, 0.4],
        ];
        VectorIndex::from_rows(
            (0..5).map(|i| format!("d{i}")).collect(),
            vectors,
            "clean",
        )
        .unwrap()
    }

    #[test]
    fn self_query_ranks_itself_first_when_dominant() {
        let index = hand_index();
        // Row 1 has the largest self-similarity (4.0) among products with
        // itself as query: scores are [0, 4, 1, 0, 0.4].
        let list = nn_search(&index, &array![0.0, 2.0, 0.0, 0.0], 5).unwrap();
        assert_eq!(list.entries[0].0, "d1");
        assert_eq!(list.entries[0].1, 4.0);
        assert_eq!(list.entries[1].0, "d2");
    }

    #[test]
    fn k1_returns_the_argmax() {
        let index = hand_index();
        let list = nn_search(&index, &array![1.0, 0.0, 0.0, 1.0], 1).unwrap();
        assert_eq!(list.len(), 1);
        // scores: d0=1, d1=0, d2=1, d3=-1, d4=0.5 → tie d0/d2, doc id asc
        assert_eq!(list.entries[0].0, "d0");
    }

    #[test]
    fn matches_brute_force_argsort_on_random_data() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let n = 200;
        let d = 16;
        let vectors =
            Array2::from_shape_simple_fn((n, d), || rng.gen_range(-1.0..1.0f64));
        let index = VectorIndex::from_rows(
            (0..n).map(|i| format!("d{i:03}")).collect(),
            vectors.clone(),
            "rand",
        )
        .unwrap();
        for _ in 0..50 {
            let q = Array1::from_shape_simple_fn(d, || rng.gen_range(-1.0..1.0f64));
            let got = nn_search(&index, &q, 10).unwrap();
            let brute = RankedList::from_scores(
                "",
                (0..n).map(|i| (format!("d{i:03}"), vectors.row(i).dot(&q))),
                10,
            );
            assert_eq!(got.entries, brute.entries);
        }
    }

    #[test]
    fn dimension_mismatch_is_a_shape_error() {
        let index = hand_index();
        assert!(matches!(
            nn_search(&index, &array![1.0, 2.0], 3),
            Err(IndexError::Shape(_))
        ));
    }
}
