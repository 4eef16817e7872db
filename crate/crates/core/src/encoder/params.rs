//! Trainable parameters: storage, deterministic initialization and flat
//! tensor iteration for the optimizer, checkpointing and gradient checks.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scalar::{fl, Scalar};

use super::{EncoderConfig, EncoderError};

/// Per-layer weights: multi-head attention projections, the feed-forward
/// pair and the two layer norms.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<F> {
    pub w_q: Array2<F>,
    pub b_q: Array1<F>,
    pub w_k: Array2<F>,
    pub b_k: Array1<F>,
    pub w_v: Array2<F>,
    pub b_v: Array1<F>,
    pub w_o: Array2<F>,
    pub b_o: Array1<F>,
    pub ln1_gain: Array1<F>,
    pub ln1_bias: Array1<F>,
    pub w_ff1: Array2<F>,
    pub b_ff1: Array1<F>,
    pub w_ff2: Array2<F>,
    pub b_ff2: Array1<F>,
    pub ln2_gain: Array1<F>,
    pub ln2_bias: Array1<F>,
}

/// All trainable weights plus the configuration that shapes them.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams<F> {
    pub config: EncoderConfig,
    pub token_emb: Array2<F>,
    pub pos_emb: Array2<F>,
    pub seg_emb: Array2<F>,
    pub layers: Vec<LayerParams<F>>,
    pub rerank_w: Array1<F>,
    /// Length-1 bias of the re-rank head.
    pub rerank_b: Array1<F>,
}

pub enum TensorRef<'a, F> {
    M(&'a Array2<F>),
    V(&'a Array1<F>),
}

pub enum TensorMut<'a, F> {
    M(&'a mut Array2<F>),
    V(&'a mut Array1<F>),
}

impl<'a, F: Scalar> TensorRef<'a, F> {
    pub fn flat(&self) -> &[F] {
        match self {
            TensorRef::M(a) => a.as_slice().expect("standard layout"),
            TensorRef::V(a) => a.as_slice().expect("standard layout"),
        }
    }
}

impl<'a, F: Scalar> TensorMut<'a, F> {
    pub fn flat(&mut self) -> &mut [F] {
        match self {
            TensorMut::M(a) => a.as_slice_mut().expect("standard layout"),
            TensorMut::V(a) => a.as_slice_mut().expect("standard layout"),
        }
    }
}

impl<F: Scalar> EncoderParams<F> {
    /// Deterministic initialization: weight matrices uniform in
    /// ±1/sqrt(d_model), biases and layer-norm shifts zero, layer-norm
    /// gains one. Draws happen in checkpoint tensor order from a ChaCha
    /// stream seeded by `config.seed`, in f64 then cast, so `f32` and
    /// `f64` instantiations see the same underlying values.
    pub fn init(config: &EncoderConfig) -> Result<Self, EncoderError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let limit = 1.0 / (config.d_model as f64).sqrt();
        let d = config.d_model;

        let mut uniform_m = |rows: usize, cols: usize| -> Array2<F> {
            Array2::from_shape_simple_fn((rows, cols), || fl(rng.gen_range(-limit..limit)))
        };
        let token_emb = uniform_m(config.vocab_size, d);
        let pos_emb = uniform_m(config.max_len, d);
        let seg_emb = uniform_m(2, d);
        let mut layers = Vec::with_capacity(config.n_layers);
        for _ in 0..config.n_layers {
            layers.push(LayerParams {
                w_q: uniform_m(d, d),
                b_q: Array1::zeros(d),
                w_k: uniform_m(d, d),
                b_k: Array1::zeros(d),
                w_v: uniform_m(d, d),
                b_v: Array1::zeros(d),
                w_o: uniform_m(d, d),
                b_o: Array1::zeros(d),
                ln1_gain: Array1::ones(d),
                ln1_bias: Array1::zeros(d),
                w_ff1: uniform_m(d, config.d_ff),
                b_ff1: Array1::zeros(config.d_ff),
                w_ff2: uniform_m(config.d_ff, d),
                b_ff2: Array1::zeros(d),
                ln2_gain: Array1::ones(d),
                ln2_bias: Array1::zeros(d),
            });
        }
        let rerank_w = Array1::from_shape_simple_fn(d, || fl(rng.gen_range(-limit..limit)));
        let rerank_b = Array1::zeros(1);
        Ok(EncoderParams {
            config: config.clone(),
            token_emb,
            pos_emb,
            seg_emb,
            layers,
            rerank_w,
            rerank_b,
        })
    }

    /// Same shapes, all zeros; the gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let z2 = |a: &Array2<F>| Array2::zeros(a.raw_dim());
        let z1 = |a: &Array1<F>| Array1::zeros(a.raw_dim());
        EncoderParams {
            config: self.config.clone(),
            token_emb: z2(&self.token_emb),
            pos_emb: z2(&self.pos_emb),
            seg_emb: z2(&self.seg_emb),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    w_q: z2(&l.w_q),
                    b_q: z1(&l.b_q),
                    w_k: z2(&l.w_k),
                    b_k: z1(&l.b_k),
                    w_v: z2(&l.w_v),
                    b_v: z1(&l.b_v),
                    w_o: z2(&l.w_o),
                    b_o: z1(&l.b_o),
                    ln1_gain: z1(&l.ln1_gain),
                    ln1_bias: z1(&l.ln1_bias),
                    w_ff1: z2(&l.w_ff1),
                    b_ff1: z1(&l.b_ff1),
                    w_ff2: z2(&l.w_ff2),
                    b_ff2: z1(&l.b_ff2),
                    ln2_gain: z1(&l.ln2_gain),
                    ln2_bias: z1(&l.ln2_bias),
                })
                .collect(),
            rerank_w: z1(&self.rerank_w),
            rerank_b: z1(&self.rerank_b),
        }
    }

    /// Element-wise accumulation, used to merge gradient chunks in a fixed
    /// order.
    pub fn add_in_place(&mut self, other: &Self) {
        let mut mine = self.tensors_mut();
        let theirs = other.tensors();
        for ((_, a), (_, b)) in mine.iter_mut().zip(theirs.iter()) {
            let a = a.flat();
            let b = b.flat();
            for (x, y) in a.iter_mut().zip(b.iter()) {
                *x += *y;
            }
        }
    }

    /// Multiplies every parameter by `factor` (gradient averaging).
    pub fn scale_in_place(&mut self, factor: F) {
        for (_, t) in self.tensors_mut().iter_mut() {
            for v in t.flat() {
                *v *= factor;
            }
        }
    }

    /// Tensors in the documented checkpoint order.
    pub fn tensors(&self) -> Vec<(String, TensorRef<'_, F>)> {
        let mut out: Vec<(String, TensorRef<'_, F>)> = vec![
            ("token_emb".into(), TensorRef::M(&self.token_emb)),
            ("pos_emb".into(), TensorRef::M(&self.pos_emb)),
            ("seg_emb".into(), TensorRef::M(&self.seg_emb)),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("layer{i}.w_q"), TensorRef::M(&l.w_q)));
            out.push((format!("layer{i}.b_q"), TensorRef::V(&l.b_q)));
            out.push((format!("layer{i}.w_k"), TensorRef::M(&l.w_k)));
            out.push((format!("layer{i}.b_k"), TensorRef::V(&l.b_k)));
            out.push((format!("layer{i}.w_v"), TensorRef::M(&l.w_v)));
            out.push((format!("layer{i}.b_v"), TensorRef::V(&l.b_v)));
            out.push((format!("layer{i}.w_o"), TensorRef::M(&l.w_o)));
            out.push((format!("layer{i}.b_o"), TensorRef::V(&l.b_o)));
            out.push((format!("layer{i}.ln1_gain"), TensorRef::V(&l.ln1_gain)));
            out.push((format!("layer{i}.ln1_bias"), TensorRef::V(&l.ln1_bias)));
            out.push((format!("layer{i}.w_ff1"), TensorRef::M(&l.w_ff1)));
            out.push((format!("layer{i}.b_ff1"), TensorRef::V(&l.b_ff1)));
            out.push((format!("layer{i}.w_ff2"), TensorRef::M(&l.w_ff2)));
            out.push((format!("layer{i}.b_ff2"), TensorRef::V(&l.b_ff2)));
            out.push((format!("layer{i}.ln2_gain"), TensorRef::V(&l.ln2_gain)));
            out.push((format!("layer{i}.ln2_bias"), TensorRef::V(&l.ln2_bias)));
        }
        out.push(("rerank_w".into(), TensorRef::V(&self.rerank_w)));
        out.push(("rerank_b".into(), TensorRef::V(&self.rerank_b)));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, TensorMut<'_, F>)> {
        let mut out: Vec<(String, TensorMut<'_, F>)> = vec![
            ("token_emb".into(), TensorMut::M(&mut self.token_emb)),
            ("pos_emb".into(), TensorMut::M(&mut self.pos_emb)),
            ("seg_emb".into(), TensorMut::M(&mut self.seg_emb)),
        ];
        for (i, l) in self.layers.iter_mut().enumerate() {
            out.push((format!("layer{i}.w_q"), TensorMut::M(&mut l.w_q)));
            out.push((format!("layer{i}.b_q"), TensorMut::V(&mut l.b_q)));
            out.push((format!("layer{i}.w_k"), TensorMut::M(&mut l.w_k)));
            out.push((format!("layer{i}.b_k"), TensorMut::V(&mut l.b_k)));
            out.push((format!("layer{i}.w_v"), TensorMut::M(&mut l.w_v)));
            out.push((format!("layer{i}.b_v"), TensorMut::V(&mut l.b_v)));
            out.push((format!("layer{i}.w_o"), TensorMut::M(&mut l.w_o)));
            out.push((format!("layer{i}.b_o"), TensorMut::V(&mut l.b_o)));
            out.push((format!("layer{i}.ln1_gain"), TensorMut::V(&mut l.ln1_gain)));
            out.push((format!("layer{i}.ln1_bias"), TensorMut::V(&mut l.ln1_bias)));
            out.push((format!("layer{i}.w_ff1"), TensorMut::M(&mut l.w_ff1)));
            out.push((format!("layer{i}.b_ff1"), TensorMut::V(&mut l.b_ff1)));
            out.push((format!("layer{i}.w_ff2"), TensorMut::M(&mut l.w_ff2)));
            out.push((format!("layer{i}.b_ff2"), TensorMut::V(&mut l.b_ff2)));
            out.push((format!("layer{i}.ln2_gain"), TensorMut::V(&mut l.ln2_gain)));
            out.push((format!("layer{i}.ln2_bias"), TensorMut::V(&mut l.ln2_bias)));
        }
        out.push(("rerank_w".into(), TensorMut::V(&mut self.rerank_w)));
        out.push(("rerank_b".into(), TensorMut::V(&mut self.rerank_b)));
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.flat().len()).sum()
    }

    /// Affine re-rank head over a CLS vector.
    pub fn rerank_logit(&self, cls: &ndarray::ArrayView1<'_, F>) -> F {
        self.rerank_w.dot(cls) + self.rerank_b[0]
    }

    /// Casts every tensor (used to move between f32 and f64 instantiations).
    pub fn cast<G: Scalar>(&self) -> EncoderParams<G> {
        let c2 = |a: &Array2<F>| a.mapv(|v| fl::<G>(v.to_f64().expect("finite")));
        let c1 = |a: &Array1<F>| a.mapv(|v| fl::<G>(v.to_f64().expect("finite")));
        EncoderParams {
            config: self.config.clone(),
            token_emb: c2(&self.token_emb),
            pos_emb: c2(&self.pos_emb),
            seg_emb: c2(&self.seg_emb),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    w_q: c2(&l.w_q),
                    b_q: c1(&l.b_q),
                    w_k: c2(&l.w_k),
                    b_k: c1(&l.b_k),
                    w_v: c2(&l.w_v),
                    b_v: c1(&l.b_v),
                    w_o: c2(&l.w_o),
                    b_o: c1(&l.b_o),
                    ln1_gain: c1(&l.ln1_gain),
                    ln1_bias: c1(&l.ln1_bias),
                    w_ff1: c2(&l.w_ff1),
                    b_ff1: c1(&l.b_ff1),
                    w_ff2: c2(&l.w_ff2),
                    b_ff2: c1(&l.b_ff2),
                    ln2_gain: c1(&l.ln2_gain),
                    ln2_bias: c1(&l.ln2_bias),
                })
                .collect(),
            rerank_w: c1(&self.rerank_w),
            rerank_b: c1(&self.rerank_b),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_and_bounded() {
        let config = EncoderConfig::small(100, 3);
        let a = EncoderParams::<f32>::init(&config).unwrap();
        let b = EncoderParams::<f32>::init(&config).unwrap();
        assert_eq!(a, b);
        let limit = 1.0 / (config.d_model as f32).sqrt();
        for v in a.token_emb.iter() {
            assert!(v.abs() <= limit);
        }
        assert!(a.layers[0].b_q.iter().all(|v| *v == 0.0));
        assert!(a.layers[0].ln1_gain.iter().all(|v| *v == 1.0));
    }

    #[test]
    fn f32_and_f64_share_the_same_draws() {
        let config = EncoderConfig::small(50, 9);
        let a = EncoderParams::<f32>::init(&config).unwrap();
        let b = EncoderParams::<f64>::init(&config).unwrap();
        for (x, y) in a.token_emb.iter().zip(b.token_emb.iter()) {
            assert_eq!(*x, *y as f32);
        }
    }

    #[test]
    fn tensor_order_is_stable_and_complete() {
        let config = EncoderConfig::small(50, 9);
        let p = EncoderParams::<f32>::init(&config).unwrap();
        let names: Vec<String> = p.tensors().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names[0], "token_emb");
        assert_eq!(names[3], "layer0.w_q");
        assert_eq!(names.last().unwrap(), "rerank_b");
        assert_eq!(names.len(), 3 + 16 * config.n_layers + 2);
        let total: usize = p.num_parameters();
        let by_hand = 50 * 64 + 128 * 64 + 2 * 64
            + 2 * (4 * (64 * 64 + 64) + 4 * 64 + 64 * 256 + 256 + 256 * 64 + 64)
            + 64
            + 1;
        assert_eq!(total, by_hand);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = EncoderConfig::small(50, 1);
        c.n_heads = 3; // 64 % 3 != 0
        assert!(EncoderParams::<f32>::init(&c).is_err());
        let mut c = EncoderConfig::small(50, 1);
        c.max_len = 4;
        assert!(EncoderParams::<f32>::init(&c).is_err());
    }
}
