//! Input framing and the embedding layer.
//!
//! A framed input is a list of columns; each column holds either one token
//! id or the ids of an aligned N-best frame column whose embeddings are
//! averaged (early fusion). The same embedding and backward path serves
//! both, so fusion differs from plain embedding only in the column kind.

use ndarray::{Array1, Array2};

use crate::scalar::{fl, Scalar};
use crate::text::{AlignedFrame, TokenSeq, CLS, PAD, SEP};

use super::{EncoderError, EncoderParams};

/// Tokens contributing to one sequence position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ColumnTokens {
    One(u32),
    /// Aligned frame column; embeddings averaged with weight 1/N.
    Avg(Vec<u32>),
}

/// A framed input sequence before embedding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InputSpec {
    pub columns: Vec<ColumnTokens>,
    pub segments: Vec<u8>,
}

impl InputSpec {
    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }
}

/// An embedded sequence: summed token+position+segment embeddings plus the
/// attention mask and the framing needed for the embedding backward pass.
#[derive(Debug, Clone)]
pub struct EmbeddedSeq<F> {
    pub x: Array2<F>,
    /// True at real positions, false at PAD.
    pub mask: Vec<bool>,
    pub spec: InputSpec,
}

/// `[CLS] query [SEP] doc [SEP]`, segment 0 over the query span (including
/// both leading specials) and segment 1 over the document span. The
/// document is truncated to fit `max_len`; the query is kept whole.
pub fn cross_input(
    query: &TokenSeq,
    doc: &TokenSeq,
    max_len: usize,
) -> Result<InputSpec, EncoderError> {
    if query.is_empty() {
        return Err(EncoderError::Input("empty query".into()));
    }
    let overhead = 3; // CLS, SEP, SEP
    if query.len() + overhead > max_len {
        return Err(EncoderError::Input(format!(
            "query of {} tokens cannot fit max_len {}",
            query.len(),
            max_len
        )));
    }
    let doc_budget = max_len - overhead - query.len();
    let doc_len = doc.len().min(doc_budget);
    let mut columns = Vec::with_capacity(query.len() + doc_len + overhead);
    let mut segments = Vec::with_capacity(columns.capacity());
    columns.push(ColumnTokens::One(CLS));
    segments.push(0);
    for &id in &query.ids {
        columns.push(ColumnTokens::One(id));
        segments.push(0);
    }
    columns.push(ColumnTokens::One(SEP));
    segments.push(0);
    for &id in &doc.ids[..doc_len] {
        columns.push(ColumnTokens::One(id));
        segments.push(1);
    }
    columns.push(ColumnTokens::One(SEP));
    segments.push(1);
    Ok(InputSpec { columns, segments })
}

/// `[CLS] x [SEP]`, segment 0, x truncated to fit.
pub fn text_input(x: &TokenSeq, max_len: usize) -> InputSpec {
    let body = x.len().min(max_len - 2);
    let mut columns = Vec::with_capacity(body + 2);
    columns.push(ColumnTokens::One(CLS));
    for &id in &x.ids[..body] {
        columns.push(ColumnTokens::One(id));
    }
    columns.push(ColumnTokens::One(SEP));
    let segments = vec![0; columns.len()];
    InputSpec { columns, segments }
}

/// `[CLS] frame columns [SEP]`, segment 0: the early-fusion input. The
/// frame is truncated to fit; CLS and SEP stay unfused.
pub fn fused_input(frame: &AlignedFrame, max_len: usize) -> InputSpec {
    let frame = crate::text::truncate_frame(frame, max_len - 2);
    let mut columns = Vec::with_capacity(frame.len() + 2);
    columns.push(ColumnTokens::One(CLS));
    for c in 0..frame.len() {
        columns.push(ColumnTokens::Avg(frame.column(c)));
    }
    columns.push(ColumnTokens::One(SEP));
    let segments = vec![0; columns.len()];
    InputSpec { columns, segments }
}

/// Embeds a framed input: per column the token embedding (or the average
/// of the column's token embeddings) plus the position and segment
/// embeddings. Columns whose tokens all agree take the embedding directly,
/// which makes the average of identical rows bit-exact.
pub fn embed<F: Scalar>(
    spec: &InputSpec,
    params: &EncoderParams<F>,
) -> Result<EmbeddedSeq<F>, EncoderError> {
    let d = params.config.d_model;
    let vocab_size = params.config.vocab_size;
    let len = spec.columns.len();
    if len > params.config.max_len {
        return Err(EncoderError::Input(format!(
            "framed length {len} exceeds max_len {}",
            params.config.max_len
        )));
    }
    let check = |id: u32| -> Result<(), EncoderError> {
        if (id as usize) < vocab_size {
            Ok(())
        } else {
            Err(EncoderError::Vocab { id, vocab_size })
        }
    };
    let mut x = Array2::<F>::zeros((len, d));
    let mut mask = vec![true; len];
    for (i, col) in spec.columns.iter().enumerate() {
        let seg = spec.segments[i] as usize;
        let mut row = x.row_mut(i);
        match col {
            ColumnTokens::One(id) => {
                check(*id)?;
                if *id == PAD {
                    mask[i] = false;
                }
                let tok = params.token_emb.row(*id as usize);
                let pos = params.pos_emb.row(i);
                let sg = params.seg_emb.row(seg);
                for k in 0..d {
                    row[k] = tok[k] + pos[k] + sg[k];
                }
            }
            ColumnTokens::Avg(ids) => {
                if ids.is_empty() {
                    return Err(EncoderError::Input(format!("empty frame column {i}")));
                }
                for id in ids {
                    check(*id)?;
                }
                let all_same = ids.iter().all(|id| *id == ids[0]);
                let pos = params.pos_emb.row(i);
                let sg = params.seg_emb.row(seg);
                if all_same {
                    let tok = params.token_emb.row(ids[0] as usize);
                    for k in 0..d {
                        row[k] = tok[k] + pos[k] + sg[k];
                    }
                } else {
                    let inv_n = fl::<F>(1.0 / ids.len() as f64);
                    let mut avg: Array1<F> = Array1::zeros(d);
                    for id in ids {
                        let tok = params.token_emb.row(*id as usize);
                        for k in 0..d {
                            avg[k] += tok[k];
                        }
                    }
                    for k in 0..d {
                        row[k] = avg[k] * inv_n + pos[k] + sg[k];
                    }
                }
            }
        }
    }
    Ok(EmbeddedSeq {
        x,
        mask,
        spec: spec.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderConfig;
    use crate::text::{TokenSource, FILLER, UNK};

    fn params() -> EncoderParams<f64> {
        let mut config = EncoderConfig::small(40, 5);
        config.d_model = 16;
        config.n_heads = 2;
        config.d_ff = 32;
        config.max_len = 16;
        EncoderParams::init(&config).unwrap()
    }

    fn seq(ids: &[u32]) -> TokenSeq {
        TokenSeq::new(ids.to_vec(), TokenSource::Clean)
    }

    #[test]
    fn embedding_is_sum_of_three_tables() {
        let p = params();
        let spec = text_input(&seq(&[7, 9]), p.config.max_len);
        let e = embed(&spec, &p).unwrap();
        // position 1 holds token 7, segment 0
        let want = p.token_emb.row(7).to_owned() + p.pos_emb.row(1) + p.seg_emb.row(0);
        assert_eq!(e.x.row(1).to_owned(), want);
        assert!(e.mask.iter().all(|&m| m));
    }

    #[test]
    fn pad_positions_are_masked() {
        let p = params();
        let spec = text_input(&seq(&[7, PAD, 9]), p.config.max_len);
        let e = embed(&spec, &p).unwrap();
        assert_eq!(e.mask, vec![true, true, false, true, true]);
    }

    #[test]
    fn out_of_vocabulary_id_is_an_error() {
        let p = params();
        let spec = text_input(&seq(&[1000]), p.config.max_len);
        assert!(matches!(
            embed(&spec, &p),
            Err(EncoderError::Vocab { id: 1000, .. })
        ));
    }

    #[test]
    fn doc_is_truncated_query_kept_whole() {
        let p = params(); // max_len 16
        let query = seq(&[5, 6, 7, 8]);
        let doc = seq(&[9; 30]);
        let spec = cross_input(&query, &doc, p.config.max_len).unwrap();
        assert_eq!(spec.len(), 16);
        // segments: CLS + 4 query + SEP = 6 zeros, then 9 doc + SEP ones
        assert_eq!(spec.segments.iter().filter(|&&s| s == 0).count(), 6);
        let long_query = seq(&[5; 20]);
        assert!(cross_input(&long_query, &doc, p.config.max_len).is_err());
        let empty = seq(&[]);
        assert!(cross_input(&empty, &doc, p.config.max_len).is_err());
    }

    #[test]
    fn fused_identical_rows_embed_like_plain_text() {
        let p = params();
        let hyps = vec![seq(&[7, 9, 11]), seq(&[7, 9, 11]), seq(&[7, 9, 11])];
        let frame = crate::text::align_nbest(&hyps).unwrap();
        let fused = embed(&fused_input(&frame, p.config.max_len), &p).unwrap();
        let plain = embed(&text_input(&seq(&[7, 9, 11]), p.config.max_len), &p).unwrap();
        assert_eq!(fused.x, plain.x);
    }

    #[test]
    fn mixed_column_averages_token_embeddings() {
        let p = params();
        // anchor [7], second hypothesis [9]: one substituted column.
        let frame = crate::text::align_nbest(&[seq(&[7]), seq(&[9])]).unwrap();
        let fused = embed(&fused_input(&frame, p.config.max_len), &p).unwrap();
        let half = crate::scalar::fl::<f64>(0.5);
        let want = (p.token_emb.row(7).to_owned() + p.token_emb.row(9)) * half
            + p.pos_emb.row(1)
            + p.seg_emb.row(0);
        for (a, b) in fused.x.row(1).iter().zip(want.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
        // A column of [token, FILLER] averages with the filler embedding.
        let frame = crate::text::align_nbest(&[seq(&[7, 9]), seq(&[7])]).unwrap();
        let fused = embed(&fused_input(&frame, p.config.max_len), &p).unwrap();
        let want = (p.token_emb.row(9).to_owned() + p.token_emb.row(FILLER as usize)) * half
            + p.pos_emb.row(2)
            + p.seg_emb.row(0);
        for (a, b) in fused.x.row(2).iter().zip(want.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
        let _ = UNK;
    }
}
