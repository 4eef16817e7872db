//! Paired two-tailed t-test over per-query reciprocal ranks.

use std::collections::BTreeMap;

use statrs::distribution::{ContinuousCDF, StudentsT};

use super::EvalError;

/// Outcome of a paired test. `t` is `None` when the differences have zero
/// variance: all-zero differences give p = 1 (identical systems), nonzero
/// constant differences set the degenerate flag instead of inventing a p.
#[derive(Debug, Clone, PartialEq)]
pub struct TtestResult {
    pub t: Option<f64>,
    pub p: Option<f64>,
    pub df: usize,
    pub degenerate: bool,
}

/// Two-tailed p for a t statistic with `df` degrees of freedom, via the
/// incomplete-beta evaluation of the Student-t CDF.
pub fn students_t_two_tailed_p(t: f64, df: usize) -> f64 {
    let dist = StudentsT::new(0.0, 1.0, df as f64).expect("valid t distribution");
    2.0 * (1.0 - dist.cdf(t.abs()))
}

/// t = mean(d) / (sd(d)/√n) with the sample standard deviation (n−1
/// denominator), d_i = a_i − b_i over the shared query set.
pub fn paired_ttest(
    a: &BTreeMap<String, f64>,
    b: &BTreeMap<String, f64>,
) -> Result<TtestResult, EvalError> {
    if a.len() != b.len() || a.keys().zip(b.keys()).any(|(x, y)| x != y) {
        return Err(EvalError::Protocol(
            "paired t-test requires identical query sets".into(),
        ));
    }
    let n = a.len();
    if n < 2 {
        return Err(EvalError::Protocol(format!(
            "paired t-test needs at least 2 queries, got {n}"
        )));
    }
    let d: Vec<f64> = a.values().zip(b.values()).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    let df = n - 1;
    if var == 0.0 {
        if mean == 0.0 {
            return Ok(TtestResult {
                t: None,
                p: Some(1.0),
                df,
                degenerate: false,
            });
        }
        return Ok(TtestResult {
            t: None,
            p: None,
            df,
            degenerate: true,
        });
    }
    let t = mean / (var.sqrt() / (n as f64).sqrt());
    let p = students_t_two_tailed_p(t, df);
    Ok(TtestResult {
        t: Some(t),
        p: Some(p),
        df,
        degenerate: false,
    })
}

#[cfg(test)]
pub(crate) mod oracle {
    //! Quadrature oracle for the t CDF, independent of the incomplete-beta
    //! route: integrates the unnormalized density under x = tan(θ), with
    //! the normalization constant itself obtained by integration.

    fn unnormalized_pdf(x: f64, df: f64) -> f64 {
        (1.0 + x * x / df).powf(-(df + 1.0) / 2.0)
    }

    /// Simpson integration of the transformed integrand over [lo, hi] in θ.
    fn simpson_theta(lo: f64, hi: f64, df: f64, steps: usize) -> f64 {
        let steps = if steps % 2 == 0 { steps } else { steps + 1 };
        let h = (hi - lo) / steps as f64;
        let g = |theta: f64| {
            let x = theta.tan();
            let sec2 = 1.0 / (theta.cos() * theta.cos());
            unnormalized_pdf(x, df) * sec2
        };
        let mut acc = g(lo) + g(hi);
        for i in 1..steps {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * g(lo + i as f64 * h);
        }
        acc * h / 3.0
    }

    /// Two-tailed p = 2·P(T ≥ |t|) by quadrature.
    pub fn two_tailed_p(t: f64, df: usize) -> f64 {
        let df = df as f64;
        let eps = 1e-12;
        let half = std::f64::consts::FRAC_PI_2;
        let norm = simpson_theta(-half + eps, half - eps, df, 40_000);
        let tail = simpson_theta(t.abs().atan(), half - eps, df, 40_000);
        2.0 * tail / norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn keyed(values: &[f64]) -> BTreeMap<String, f64> {
        values
            .iter()
            .enumerate()
            .map(|(i, v)| (format!("q{i:03}"), *v))
            .collect()
    }

    #[test]
    fn identical_systems_give_p_one() {
        let a = keyed(&[0.5, 0.25, 1.0, 0.1]);
        let r = paired_ttest(&a, &a.clone()).unwrap();
        assert_eq!(r.t, None);
        assert_eq!(r.p, Some(1.0));
        assert!(!r.degenerate);
    }

    #[test]
    fn hand_example_matches_the_table() {
        // d = [0.1, 0.2, 0.3, 0.4]: mean 0.25, sd 0.1291, t = 3.873, df 3
        let b = keyed(&[0.0, 0.0, 0.0, 0.0]);
        let a = keyed(&[0.1, 0.2, 0.3, 0.4]);
        let r = paired_ttest(&a, &b).unwrap();
        let t = r.t.unwrap();
        assert!((t - 3.873).abs() < 1e-3);
        assert!((r.p.unwrap() - 0.0305).abs() < 1e-3);
        assert_eq!(r.df, 3);
    }

    #[test]
    fn sign_flip_flips_t_not_p() {
        let base = keyed(&[0.0, 0.0, 0.0, 0.0, 0.0]);
        let up = keyed(&[0.1, 0.3, 0.2, 0.15, 0.4]);
        let r1 = paired_ttest(&up, &base).unwrap();
        let r2 = paired_ttest(&base, &up).unwrap();
        assert!((r1.t.unwrap() + r2.t.unwrap()).abs() < 1e-12);
        assert!((r1.p.unwrap() - r2.p.unwrap()).abs() < 1e-12);
    }

    #[test]
    fn constant_nonzero_differences_are_degenerate() {
        let a = keyed(&[1.5, 2.5, 3.5]);
        let b = keyed(&[1.0, 2.0, 3.0]);
        let r = paired_ttest(&a, &b).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.p, None);
    }

    #[test]
    fn mismatched_query_sets_are_rejected() {
        let a = keyed(&[0.1, 0.2]);
        let mut b = keyed(&[0.1, 0.2]);
        let v = b.remove("q001").unwrap();
        b.insert("qxxx".into(), v);
        assert!(paired_ttest(&a, &b).is_err());
    }

    #[test]
    fn p_matches_the_quadrature_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        for _ in 0..100 {
            let n = rng.gen_range(4..40usize);
            let a: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
            let b: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
            let r = paired_ttest(&keyed(&a), &keyed(&b)).unwrap();
            if let (Some(t), Some(p)) = (r.t, r.p) {
                let want = oracle::two_tailed_p(t, r.df);
                assert!(
                    (p - want).abs() < 1e-6,
                    "t={t} df={} p={p} oracle={want}",
                    r.df
                );
            }
        }
    }
}
