//! Wall-clock search latency measurement.

use std::time::Instant;

use serde::Serialize;

use super::EvalError;

#[derive(Debug, Clone, Serialize)]
pub struct TimingReport {
    pub system_tag: String,
    pub queries: usize,
    pub depth: usize,
    pub mean_secs: f64,
    pub sd_secs: f64,
    /// Coefficient of variation: sd / mean.
    pub cov: f64,
}

/// Measures mean per-query wall time of a search closure at the given
/// depth. The first few queries warm the system up unmeasured; index and
/// model loading happen before this call by construction.
pub fn timing_harness<Q, S>(
    system_tag: &str,
    mut search: S,
    queries: &[Q],
    depth: usize,
) -> Result<TimingReport, EvalError>
where
    S: FnMut(&Q, usize),
{
    if queries.len() < 50 {
        return Err(EvalError::Protocol(format!(
            "timing needs at least 50 queries, got {}",
            queries.len()
        )));
    }
    let warmup = 5.min(queries.len());
    for q in &queries[..warmup] {
        search(q, depth);
    }
    let mut times = Vec::with_capacity(queries.len());
    for q in queries {
        let start = Instant::now();
        search(q, depth);
        times.push(start.elapsed().as_secs_f64());
    }
    let n = times.len() as f64;
    let mean = times.iter().sum::<f64>() / n;
    let var = times.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    Ok(TimingReport {
        system_tag: system_tag.to_string(),
        queries: times.len(),
        depth,
        mean_secs: mean,
        sd_secs: sd,
        cov: if mean > 0.0 { sd / mean } else { 0.0 },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn measures_and_reports_variation() {
        let queries: Vec<u32> = (0..60).collect();
        let report = timing_harness(
            "busy",
            |q, _k| {
                // Small deterministic busy loop.
                let mut acc = *q;
                for i in 0..2_000u32 {
                    acc = acc.wrapping_mul(31).wrapping_add(i);
                }
                std::hint::black_box(acc);
            },
            &queries,
            100,
        )
        .unwrap();
        assert_eq!(report.queries, 60);
        assert!(report.mean_secs > 0.0);
        assert!(report.cov >= 0.0);
    }

    #[test]
    fn too_few_queries_is_an_error() {
        let queries: Vec<u32> = (0..10).collect();
        assert!(timing_harness("x", |_q, _k| {}, &queries, 100).is_err());
    }
}
