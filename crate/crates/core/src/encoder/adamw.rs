//! AdamW with decoupled weight decay.

use crate::scalar::{fl, Scalar};

use super::{EncoderError, EncoderParams};

/// First/second moment accumulators aligned with the parameter tensor
/// order, plus the step counter and hyperparameters.
pub struct OptimizerState<F> {
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
    step: u64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl<F: Scalar> OptimizerState<F> {
    pub fn new(params: &EncoderParams<F>, learning_rate: f64, weight_decay: f64) -> Self {
        let shapes: Vec<usize> = params.tensors().iter().map(|(_, t)| t.flat().len()).collect();
        OptimizerState {
            m: shapes.iter().map(|&n| vec![F::zero(); n]).collect(),
            v: shapes.iter().map(|&n| vec![F::zero(); n]).collect(),
            step: 0,
            learning_rate,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One AdamW update: θ ← θ − lr·(m̂/(√v̂+ε) + wd·θ). Aborts on a
    /// non-finite gradient, naming the offending tensor.
    pub fn step(
        &mut self,
        params: &mut EncoderParams<F>,
        grads: &EncoderParams<F>,
    ) -> Result<(), EncoderError> {
        for (name, g) in grads.tensors() {
            if g.flat().iter().any(|v| !v.is_finite()) {
                return Err(EncoderError::NonFiniteGrad { tensor: name });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let b1 = fl::<F>(self.beta1);
        let b2 = fl::<F>(self.beta2);
        let one = F::one();
        let lr = fl::<F>(self.learning_rate);
        let wd = fl::<F>(self.weight_decay);
        let eps = fl::<F>(self.epsilon);
        let bias1 = one - b1.powi(t);
        let bias2 = one - b2.powi(t);

        let mut tensors = params.tensors_mut();
        let g_tensors = grads.tensors();
        for (idx, ((_, p), (_, g))) in tensors.iter_mut().zip(g_tensors.iter()).enumerate() {
            let p = p.flat();
            let g = g.flat();
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            for j in 0..p.len() {
                let gj = g[j];
                m[j] = b1 * m[j] + (one - b1) * gj;
                v[j] = b2 * v[j] + (one - b2) * gj * gj;
                let m_hat = m[j] / bias1;
                let v_hat = v[j] / bias2;
                p[j] = p[j] - lr * (m_hat / (v_hat.sqrt() + eps) + wd * p[j]);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderConfig;

    fn tiny() -> EncoderParams<f64> {
        let mut c = EncoderConfig::small(30, 4);
        c.d_model = 16;
        c.n_heads = 2;
        c.d_ff = 32;
        c.max_len = 8;
        EncoderParams::init(&c).unwrap()
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let mut p = tiny();
        let before = p.clone();
        let mut grads = p.zeros_like();
        grads.token_emb[[5, 0]] = 1.0;
        let mut opt = OptimizerState::new(&p, 0.0, 5e-5);
        opt.step(&mut p, &grads).unwrap();
        assert_eq!(p, before);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn gradient_step_moves_against_the_gradient() {
        let mut p = tiny();
        let before = p.token_emb[[5, 0]];
        let mut grads = p.zeros_like();
        grads.token_emb[[5, 0]] = 1.0;
        let mut opt = OptimizerState::new(&p, 1e-2, 0.0);
        opt.step(&mut p, &grads).unwrap();
        assert!(p.token_emb[[5, 0]] < before);
        // Untouched coordinates stay put when decay is zero.
        assert_eq!(p.token_emb[[6, 0]], tiny().token_emb[[6, 0]]);
    }

    #[test]
    fn non_finite_gradient_aborts_with_tensor_name() {
        let mut p = tiny();
        let mut grads = p.zeros_like();
        grads.layers[1].w_ff1[[0, 0]] = f64::NAN;
        let mut opt = OptimizerState::new(&p, 1e-3, 0.0);
        match opt.step(&mut p, &grads) {
            Err(EncoderError::NonFiniteGrad { tensor }) => {
                assert_eq!(tensor, "layer1.w_ff1");
            }
            other => panic!("expected NonFiniteGrad, got {other:?}"),
        }
    }

    #[test]
    fn updates_are_deterministic() {
        let run = || {
            let mut p = tiny();
            let mut grads = p.zeros_like();
            grads.rerank_w[0] = 0.3;
            grads.token_emb[[7, 3]] = -0.2;
            let mut opt = OptimizerState::new(&p, 1e-3, 5e-5);
            for _ in 0..5 {
                opt.step(&mut p, &grads).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }
}
