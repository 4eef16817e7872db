//! Training losses: binary cross-entropy for re-ranking and negative
//! log-softmax for dense retrieval, with the gradient forms used by the
//! training loop.

use crate::scalar::{fl, Scalar};

/// Clamp bound for scores entering the re-rank cross-entropy; the loss is
/// undefined at exactly 0 or 1.
pub const SCORE_EPS: f64 = 1e-7;

pub fn sigmoid<F: Scalar>(z: F) -> F {
    if z >= F::zero() {
        (F::one() + (-z).exp()).recip()
    } else {
        let e = z.exp();
        e / (F::one() + e)
    }
}

/// ln(1 + exp(x)) without overflow.
fn softplus<F: Scalar>(x: F) -> F {
    if x > F::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Re-rank cross-entropy over one positive score and J negative scores:
/// −log(pos) − Σ log(1 − neg). Scores at the boundary are clamped to
/// [ε, 1−ε] with ε = 1e-7.
pub fn rerank_loss<F: Scalar>(pos: F, negs: &[F]) -> F {
    let eps = fl::<F>(SCORE_EPS);
    let clamp = |s: F| s.max(eps).min(F::one() - eps);
    let mut loss = -clamp(pos).ln();
    for &n in negs {
        loss = loss - (F::one() - clamp(n)).ln();
    }
    loss
}

/// Same loss computed from logits, with gradients. Returns
/// (loss, d/d pos_logit, d/d neg_logits).
pub fn rerank_loss_from_logits<F: Scalar>(
    pos_logit: F,
    neg_logits: &[F],
) -> (F, F, Vec<F>) {
    // −ln σ(z) = softplus(−z); −ln(1−σ(z)) = softplus(z).
    let mut loss = softplus(-pos_logit);
    let d_pos = sigmoid(pos_logit) - F::one();
    let mut d_negs = Vec::with_capacity(neg_logits.len());
    for &z in neg_logits {
        loss = loss + softplus(z);
        d_negs.push(sigmoid(z));
    }
    (loss, d_pos, d_negs)
}

/// Dense-retrieval loss: negative log-softmax of the positive similarity
/// among {positive} ∪ negatives, computed with max subtraction.
pub fn dr_loss<F: Scalar>(pos: F, negs: &[F]) -> F {
    let mut m = pos;
    for &n in negs {
        if n > m {
            m = n;
        }
    }
    let mut sum = (pos - m).exp();
    for &n in negs {
        sum = sum + (n - m).exp();
    }
    m + sum.ln() - pos
}

/// Loss plus gradients w.r.t. the similarities:
/// d/d pos = p_pos − 1, d/d neg_j = p_j under the softmax p.
pub fn dr_loss_grad<F: Scalar>(pos: F, negs: &[F]) -> (F, F, Vec<F>) {
    let mut m = pos;
    for &n in negs {
        if n > m {
            m = n;
        }
    }
    let e_pos = (pos - m).exp();
    let mut sum = e_pos;
    let mut e_negs = Vec::with_capacity(negs.len());
    for &n in negs {
        let e = (n - m).exp();
        e_negs.push(e);
        sum = sum + e;
    }
    let loss = m + sum.ln() - pos;
    let d_pos = e_pos / sum - F::one();
    let d_negs = e_negs.into_iter().map(|e| e / sum).collect();
    (loss, d_pos, d_negs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rerank_loss_symmetric_case_is_two_ln_two() {
        let loss = rerank_loss(0.5f64, &[0.5]);
        assert!((loss - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
        assert!((loss - 1.386_294_361_119_890_6).abs() < 1e-9);
    }

    #[test]
    fn rerank_loss_perfect_separation_is_near_zero() {
        let e = SCORE_EPS;
        let loss = rerank_loss(1.0 - e, &[e, e, e]);
        assert!(loss >= 0.0 && loss < 1e-5);
    }

    #[test]
    fn rerank_loss_clamps_boundary_scores() {
        assert!(rerank_loss(1.0f64, &[0.0]).is_finite());
        assert!(rerank_loss(0.0f64, &[1.0]).is_finite());
    }

    #[test]
    fn rerank_loss_decreases_in_pos_score() {
        let negs = [0.3f64, 0.6];
        let mut prev = f64::INFINITY;
        for pos in [0.1, 0.3, 0.5, 0.7, 0.9] {
            let l = rerank_loss(pos, &negs);
            assert!(l < prev);
            prev = l;
        }
    }

    #[test]
    fn logit_form_matches_score_form() {
        let zs = [-2.5f64, -0.3, 0.0, 0.7, 3.1];
        for &zp in &zs {
            let (loss, _, _) = rerank_loss_from_logits(zp, &[-1.0, 0.4]);
            let by_scores = rerank_loss(sigmoid(zp), &[sigmoid(-1.0), sigmoid(0.4)]);
            assert!((loss - by_scores).abs() < 1e-9, "zp={zp}");
        }
    }

    #[test]
    fn dr_loss_symmetric_pair_is_ln_two() {
        let loss = dr_loss(0.37f64, &[0.37]);
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn dr_loss_hand_case() {
        // -ln(e^2 / (e^2 + 2e^0)) = ln(1 + 2e^(-2)) = 0.2395447662…
        let loss = dr_loss(2.0f64, &[0.0, 0.0]);
        let want = (1.0 + 2.0 * (-2.0f64).exp()).ln();
        assert!((loss - want).abs() < 1e-12);
        assert!((loss - 0.239544766).abs() < 1e-6);
    }

    #[test]
    fn dr_loss_is_shift_invariant() {
        let negs = [0.3f64, -1.2, 2.2];
        let a = dr_loss(0.9, &negs);
        for shift in [-100.0, -5.0, 3.0, 250.0] {
            let shifted: Vec<f64> = negs.iter().map(|n| n + shift).collect();
            let b = dr_loss(0.9 + shift, &shifted);
            assert!((a - b).abs() < 1e-9, "shift {shift}: {a} vs {b}");
        }
    }

    #[test]
    fn dr_grad_sums_to_zero() {
        let (_, dp, dn) = dr_loss_grad(0.4f64, &[0.1, -0.7, 1.3]);
        let total: f64 = dp + dn.iter().sum::<f64>();
        assert!(total.abs() < 1e-12);
    }
}
