//! Exact reverse-mode gradients for the recorded forward trace.
//!
//! Gradients accumulate into a zeros-initialized parameter set, which keeps
//! merge order explicit when batches are processed in parallel chunks.

use ndarray::{s, Array1, Array2, ArrayView1, Axis};

use crate::scalar::{fl, Scalar};

use super::forward::{gelu_prime, EncodeTrace, LnTrace};
use super::input::ColumnTokens;
use super::EncoderParams;

fn ln_backward<F: Scalar>(
    dy: &Array2<F>,
    trace: &LnTrace<F>,
    gain: &Array1<F>,
) -> (Array2<F>, Array1<F>, Array1<F>) {
    let (l, d) = dy.dim();
    let inv_d = fl::<F>(1.0 / d as f64);
    let mut d_gain = Array1::<F>::zeros(d);
    let mut d_bias = Array1::<F>::zeros(d);
    let mut dx = Array2::<F>::zeros((l, d));
    for i in 0..l {
        let dy_row = dy.row(i);
        let xh_row = trace.x_hat.row(i);
        let mut m1 = F::zero();
        let mut m2 = F::zero();
        for j in 0..d {
            let dxh = dy_row[j] * gain[j];
            m1 += dxh;
            m2 += dxh * xh_row[j];
            d_gain[j] += dy_row[j] * xh_row[j];
            d_bias[j] += dy_row[j];
        }
        m1 *= inv_d;
        m2 *= inv_d;
        let inv = trace.inv_std[i];
        let mut dx_row = dx.row_mut(i);
        for j in 0..d {
            let dxh = dy_row[j] * gain[j];
            dx_row[j] = inv * (dxh - m1 - xh_row[j] * m2);
        }
    }
    (dx, d_gain, d_bias)
}

/// Row-wise softmax backward: ds = p ⊙ (dp − rowsum(dp ⊙ p)).
fn softmax_backward<F: Scalar>(p: &Array2<F>, dp: &Array2<F>) -> Array2<F> {
    let (l, m) = p.dim();
    let mut ds = Array2::<F>::zeros((l, m));
    for i in 0..l {
        let p_row = p.row(i);
        let dp_row = dp.row(i);
        let mut dot = F::zero();
        for j in 0..m {
            dot += p_row[j] * dp_row[j];
        }
        let mut ds_row = ds.row_mut(i);
        for j in 0..m {
            ds_row[j] = p_row[j] * (dp_row[j] - dot);
        }
    }
    ds
}

/// Backpropagates `d_output` (gradient at the final hidden states) through
/// the trace, accumulating parameter gradients into `grads`.
pub fn backward<F: Scalar>(
    trace: &EncodeTrace<F>,
    d_output: Array2<F>,
    params: &EncoderParams<F>,
    grads: &mut EncoderParams<F>,
) {
    let config = &params.config;
    let heads = config.n_heads;
    let dk = config.d_model / heads;
    let scale = fl::<F>(1.0 / (dk as f64).sqrt());

    let mut dx = d_output;
    for (li, lt) in trace.layers.iter().enumerate().rev() {
        let lp = &params.layers[li];
        let gl = &mut grads.layers[li];

        // Second sublayer: x_out = LN2(x_mid + ffn)
        let (d_r2, d_g2, d_b2) = ln_backward(&dx, &lt.ln2, &lp.ln2_gain);
        gl.ln2_gain += &d_g2;
        gl.ln2_bias += &d_b2;
        let d_ffn = match &lt.ffn_drop {
            Some(m) => &d_r2 * m,
            None => d_r2.clone(),
        };
        let mut d_x_mid = d_r2;

        gl.w_ff2 += &lt.h_act.t().dot(&d_ffn);
        gl.b_ff2 += &d_ffn.sum_axis(Axis(0));
        let d_h_act = d_ffn.dot(&lp.w_ff2.t());
        let d_h_pre = &d_h_act * &lt.h_pre.mapv(gelu_prime);
        gl.w_ff1 += &lt.x_mid.t().dot(&d_h_pre);
        gl.b_ff1 += &d_h_pre.sum_axis(Axis(0));
        d_x_mid += &d_h_pre.dot(&lp.w_ff1.t());

        // First sublayer: x_mid = LN1(x_in + attn)
        let (d_r1, d_g1, d_b1) = ln_backward(&d_x_mid, &lt.ln1, &lp.ln1_gain);
        gl.ln1_gain += &d_g1;
        gl.ln1_bias += &d_b1;
        let d_attn = match &lt.attn_drop {
            Some(m) => &d_r1 * m,
            None => d_r1.clone(),
        };
        let mut d_x_in = d_r1;

        gl.w_o += &lt.ctx.t().dot(&d_attn);
        gl.b_o += &d_attn.sum_axis(Axis(0));
        let d_ctx = d_attn.dot(&lp.w_o.t());

        let l_len = lt.x_in.nrows();
        let mut d_q = Array2::<F>::zeros((l_len, config.d_model));
        let mut d_k = Array2::<F>::zeros((l_len, config.d_model));
        let mut d_v = Array2::<F>::zeros((l_len, config.d_model));
        for h in 0..heads {
            let cols = s![.., h * dk..(h + 1) * dk];
            let qh = lt.q.slice(cols);
            let kh = lt.k.slice(cols);
            let vh = lt.v.slice(cols);
            let d_ctx_h = d_ctx.slice(cols);
            let p = &lt.probs[h];
            let (pd, d_p) = match &lt.prob_masks {
                Some(masks) => {
                    let m = &masks[h];
                    (p * m, d_ctx_h.dot(&vh.t()) * m)
                }
                None => (p.clone(), d_ctx_h.dot(&vh.t())),
            };
            d_v.slice_mut(cols).assign(&pd.t().dot(&d_ctx_h));
            let mut d_s = softmax_backward(p, &d_p);
            d_s.mapv_inplace(|v| v * scale);
            d_q.slice_mut(cols).assign(&d_s.dot(&kh));
            d_k.slice_mut(cols).assign(&d_s.t().dot(&qh));
        }

        gl.w_q += &lt.x_in.t().dot(&d_q);
        gl.b_q += &d_q.sum_axis(Axis(0));
        gl.w_k += &lt.x_in.t().dot(&d_k);
        gl.b_k += &d_k.sum_axis(Axis(0));
        gl.w_v += &lt.x_in.t().dot(&d_v);
        gl.b_v += &d_v.sum_axis(Axis(0));
        d_x_in += &d_q.dot(&lp.w_q.t());
        d_x_in += &d_k.dot(&lp.w_k.t());
        d_x_in += &d_v.dot(&lp.w_v.t());
        dx = d_x_in;
    }

    // Embedding backward through the framing.
    if let Some(m) = &trace.embed_drop {
        dx = &dx * m;
    }
    for (i, col) in trace.input.spec.columns.iter().enumerate() {
        let g = dx.row(i);
        let seg = trace.input.spec.segments[i] as usize;
        {
            let mut pos_row = grads.pos_emb.row_mut(i);
            for (p, v) in pos_row.iter_mut().zip(g.iter()) {
                *p += *v;
            }
        }
        {
            let mut seg_row = grads.seg_emb.row_mut(seg);
            for (p, v) in seg_row.iter_mut().zip(g.iter()) {
                *p += *v;
            }
        }
        match col {
            ColumnTokens::One(id) => {
                let mut row = grads.token_emb.row_mut(*id as usize);
                for (p, v) in row.iter_mut().zip(g.iter()) {
                    *p += *v;
                }
            }
            ColumnTokens::Avg(ids) => {
                let w = fl::<F>(1.0 / ids.len() as f64);
                for id in ids {
                    let mut row = grads.token_emb.row_mut(*id as usize);
                    for (p, v) in row.iter_mut().zip(g.iter()) {
                        *p += *v * w;
                    }
                }
            }
        }
    }
}

/// Backward when the loss touches only the CLS vector.
pub fn backward_from_cls<F: Scalar>(
    trace: &EncodeTrace<F>,
    d_cls: ArrayView1<'_, F>,
    params: &EncoderParams<F>,
    grads: &mut EncoderParams<F>,
) {
    let mut d_output = Array2::<F>::zeros(trace.output.raw_dim());
    d_output.row_mut(0).assign(&d_cls);
    backward(trace, d_output, params, grads);
}
