//! Transformer forward pass with trace recording for exact backprop.
//!
//! Post-norm layout per layer: masked multi-head self-attention, residual
//! add, layer norm, feed-forward (tanh-GELU), residual add, layer norm.
//! Dropout (embedding sums, attention probabilities, sublayer outputs) is
//! active only in [`Phase::Train`] and records its masks in the trace.

use ndarray::{s, Array1, Array2, ArrayView1};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::scalar::{fl, Scalar};

use super::input::EmbeddedSeq;
use super::{EncoderError, EncoderParams};

pub(crate) const LN_EPS: f64 = 1e-5;
/// Additive mask bias; exp(-1e30) underflows to zero for both scalars.
const MASKED: f64 = -1e30;

/// Forward mode. Training needs a caller-provided RNG so dropout stays
/// deterministic under a fixed seed.
pub enum Phase<'a> {
    Infer,
    Train {
        dropout_rate: f64,
        rng: &'a mut ChaCha8Rng,
    },
}

pub(crate) struct LnTrace<F> {
    pub x_hat: Array2<F>,
    pub inv_std: Array1<F>,
}

pub(crate) struct LayerTrace<F> {
    pub x_in: Array2<F>,
    pub q: Array2<F>,
    pub k: Array2<F>,
    pub v: Array2<F>,
    /// Post-softmax attention, one L×L matrix per head (pre-dropout).
    pub probs: Vec<Array2<F>>,
    pub prob_masks: Option<Vec<Array2<F>>>,
    /// Concatenated head contexts, before the output projection.
    pub ctx: Array2<F>,
    pub attn_drop: Option<Array2<F>>,
    pub ln1: LnTrace<F>,
    /// Output of the first layer norm; input to the feed-forward block.
    pub x_mid: Array2<F>,
    pub h_pre: Array2<F>,
    pub h_act: Array2<F>,
    pub ffn_drop: Option<Array2<F>>,
    pub ln2: LnTrace<F>,
}

/// Everything the backward pass needs, plus the final hidden states.
pub struct EncodeTrace<F> {
    pub input: EmbeddedSeq<F>,
    pub(crate) embed_drop: Option<Array2<F>>,
    pub(crate) layers: Vec<LayerTrace<F>>,
    pub output: Array2<F>,
}

impl<F: Scalar> EncodeTrace<F> {
    /// The position-0 output vector.
    pub fn cls(&self) -> ArrayView1<'_, F> {
        self.output.row(0)
    }
}

pub(crate) fn gelu<F: Scalar>(x: F) -> F {
    let c = fl::<F>(0.797_884_560_802_865_4); // sqrt(2/pi)
    let a = fl::<F>(0.044715);
    let u = c * (x + a * x * x * x);
    fl::<F>(0.5) * x * (F::one() + u.tanh())
}

pub(crate) fn gelu_prime<F: Scalar>(x: F) -> F {
    let c = fl::<F>(0.797_884_560_802_865_4);
    let a = fl::<F>(0.044715);
    let u = c * (x + a * x * x * x);
    let t = u.tanh();
    let sech2 = F::one() - t * t;
    fl::<F>(0.5) * (F::one() + t)
        + fl::<F>(0.5) * x * sech2 * c * (F::one() + fl::<F>(3.0) * a * x * x)
}

fn layer_norm<F: Scalar>(x: &Array2<F>, gain: &Array1<F>, bias: &Array1<F>) -> (Array2<F>, LnTrace<F>) {
    let (l, d) = x.dim();
    let inv_d = fl::<F>(1.0 / d as f64);
    let eps = fl::<F>(LN_EPS);
    let mut x_hat = Array2::<F>::zeros((l, d));
    let mut inv_std = Array1::<F>::zeros(l);
    let mut y = Array2::<F>::zeros((l, d));
    for i in 0..l {
        let row = x.row(i);
        let mut mean = F::zero();
        for v in row.iter() {
            mean += *v;
        }
        mean *= inv_d;
        let mut var = F::zero();
        for v in row.iter() {
            let c = *v - mean;
            var += c * c;
        }
        var *= inv_d;
        let inv = (var + eps).sqrt().recip();
        inv_std[i] = inv;
        let mut xh = x_hat.row_mut(i);
        let mut yr = y.row_mut(i);
        for j in 0..d {
            let h = (row[j] - mean) * inv;
            xh[j] = h;
            yr[j] = gain[j] * h + bias[j];
        }
    }
    (y, LnTrace { x_hat, inv_std })
}

/// Row-wise softmax with max subtraction, in place.
fn softmax_rows<F: Scalar>(m: &mut Array2<F>) {
    for mut row in m.rows_mut() {
        let mut max = F::neg_infinity();
        for v in row.iter() {
            if *v > max {
                max = *v;
            }
        }
        let mut sum = F::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        let inv = sum.recip();
        for v in row.iter_mut() {
            *v *= inv;
        }
    }
}

fn dropout_mask<F: Scalar>(
    shape: (usize, usize),
    rate: f64,
    rng: &mut ChaCha8Rng,
) -> Array2<F> {
    let keep = fl::<F>(1.0 / (1.0 - rate));
    Array2::from_shape_simple_fn(shape, || {
        if rng.gen::<f64>() < rate {
            F::zero()
        } else {
            keep
        }
    })
}

fn broadcast_add_bias<F: Scalar>(m: &mut Array2<F>, bias: &Array1<F>) {
    for mut row in m.rows_mut() {
        for (v, b) in row.iter_mut().zip(bias.iter()) {
            *v += *b;
        }
    }
}

fn all_finite<F: Scalar>(m: &Array2<F>) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// Runs the encoder over an embedded sequence, recording the trace.
pub fn encode_trace<F: Scalar>(
    seq: &EmbeddedSeq<F>,
    params: &EncoderParams<F>,
    mut phase: Phase<'_>,
) -> Result<EncodeTrace<F>, EncoderError> {
    let config = &params.config;
    let l = seq.x.nrows();
    let d = config.d_model;
    let heads = config.n_heads;
    let dk = d / heads;
    let scale = fl::<F>(1.0 / (dk as f64).sqrt());

    let drop = |shape: (usize, usize), phase: &mut Phase<'_>| -> Option<Array2<F>> {
        match phase {
            Phase::Infer => None,
            Phase::Train { dropout_rate, rng } => {
                if *dropout_rate == 0.0 {
                    None
                } else {
                    Some(dropout_mask(shape, *dropout_rate, rng))
                }
            }
        }
    };

    let embed_drop = drop((l, d), &mut phase);
    let mut x = seq.x.clone();
    if let Some(m) = &embed_drop {
        x = &x * m;
    }

    let mut layers = Vec::with_capacity(config.n_layers);
    for (li, lp) in params.layers.iter().enumerate() {
        let x_in = x;
        let mut q = x_in.dot(&lp.w_q);
        broadcast_add_bias(&mut q, &lp.b_q);
        let mut k = x_in.dot(&lp.w_k);
        broadcast_add_bias(&mut k, &lp.b_k);
        let mut v = x_in.dot(&lp.w_v);
        broadcast_add_bias(&mut v, &lp.b_v);

        let mut probs = Vec::with_capacity(heads);
        let mut prob_masks_acc: Vec<Array2<F>> = Vec::new();
        let mut ctx = Array2::<F>::zeros((l, d));
        for h in 0..heads {
            let cols = s![.., h * dk..(h + 1) * dk];
            let qh = q.slice(cols);
            let kh = k.slice(cols);
            let vh = v.slice(cols);
            let mut scores = qh.dot(&kh.t());
            scores.mapv_inplace(|s| s * scale);
            for (j, &keep) in seq.mask.iter().enumerate() {
                if !keep {
                    scores.column_mut(j).fill(fl(MASKED));
                }
            }
            softmax_rows(&mut scores);
            let p = scores;
            let pd = match drop((l, l), &mut phase) {
                Some(m) => {
                    let pd = &p * &m;
                    prob_masks_acc.push(m);
                    pd
                }
                None => p.clone(),
            };
            let ctx_h = pd.dot(&vh);
            ctx.slice_mut(cols).assign(&ctx_h);
            probs.push(p);
        }
        let prob_masks = if prob_masks_acc.is_empty() {
            None
        } else {
            Some(prob_masks_acc)
        };

        let mut attn_out = ctx.dot(&lp.w_o);
        broadcast_add_bias(&mut attn_out, &lp.b_o);
        let attn_drop = drop((l, d), &mut phase);
        if let Some(m) = &attn_drop {
            attn_out = &attn_out * m;
        }
        let r1 = &x_in + &attn_out;
        let (x_mid, ln1) = layer_norm(&r1, &lp.ln1_gain, &lp.ln1_bias);

        let mut h_pre = x_mid.dot(&lp.w_ff1);
        broadcast_add_bias(&mut h_pre, &lp.b_ff1);
        let h_act = h_pre.mapv(gelu);
        let mut ffn = h_act.dot(&lp.w_ff2);
        broadcast_add_bias(&mut ffn, &lp.b_ff2);
        let ffn_drop = drop((l, d), &mut phase);
        if let Some(m) = &ffn_drop {
            ffn = &ffn * m;
        }
        let r2 = &x_mid + &ffn;
        let (x_out, ln2) = layer_norm(&r2, &lp.ln2_gain, &lp.ln2_bias);

        if !all_finite(&x_out) {
            return Err(EncoderError::NonFinite { layer: li });
        }

        layers.push(LayerTrace {
            x_in,
            q,
            k,
            v,
            probs,
            prob_masks,
            ctx,
            attn_drop,
            ln1,
            x_mid,
            h_pre,
            h_act,
            ffn_drop,
            ln2,
        });
        x = x_out;
    }

    Ok(EncodeTrace {
        input: seq.clone(),
        embed_drop,
        layers,
        output: x,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{embed, text_input, EncoderConfig};
    use crate::text::{TokenSeq, TokenSource, PAD};
    use rand::SeedableRng;

    fn params() -> EncoderParams<f64> {
        let mut config = EncoderConfig::small(60, 11);
        config.d_model = 16;
        config.n_heads = 2;
        config.d_ff = 32;
        config.max_len = 24;
        EncoderParams::init(&config).unwrap()
    }

    fn seq(ids: &[u32]) -> TokenSeq {
        TokenSeq::new(ids.to_vec(), TokenSource::Clean)
    }

    fn cls_of(p: &EncoderParams<f64>, ids: &[u32]) -> Array1<f64> {
        let e = embed(&text_input(&seq(ids), p.config.max_len), p).unwrap();
        encode_trace(&e, p, Phase::Infer).unwrap().cls().to_owned()
    }

    #[test]
    fn deterministic_inference() {
        let p = params();
        assert_eq!(cls_of(&p, &[6, 7, 8]), cls_of(&p, &[6, 7, 8]));
    }

    #[test]
    fn single_token_input_yields_finite_cls() {
        let p = params();
        let cls = cls_of(&p, &[]);
        assert_eq!(cls.len(), p.config.d_model);
        assert!(cls.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn masked_tail_content_does_not_change_cls() {
        let p = params();
        // PAD positions are masked, so the ids stored there must not matter.
        let a = cls_of(&p, &[6, 7, PAD, PAD]);
        let e = embed(&text_input(&seq(&[6, 7, PAD, PAD]), p.config.max_len), &p).unwrap();
        // Overwrite embeddings at the masked positions with junk.
        let mut tampered = e.clone();
        for j in 0..p.config.d_model {
            tampered.x[[3, j]] = 123.456;
            tampered.x[[4, j]] = -55.5;
        }
        let b = encode_trace(&tampered, &p, Phase::Infer)
            .unwrap()
            .cls()
            .to_owned();
        assert_eq!(a, b);
    }

    #[test]
    fn train_phase_dropout_is_seeded() {
        let p = params();
        let e = embed(&text_input(&seq(&[6, 7, 8]), p.config.max_len), &p).unwrap();
        let run = |seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            encode_trace(
                &e,
                &p,
                Phase::Train {
                    dropout_rate: 0.2,
                    rng: &mut rng,
                },
            )
            .unwrap()
            .cls()
            .to_owned()
        };
        assert_eq!(run(1), run(1));
        assert_ne!(run(1), run(2));
    }
}
