//! Per-query comparison of two runs against the same qrels.

use std::collections::BTreeMap;

use serde::Serialize;

use super::metrics::reciprocal_ranks;
use super::ttest::paired_ttest;
use super::{EvalError, RunFile};

/// Counts of queries improved / regressed / unchanged by run A relative to
/// run B, with mean movement within each group and the paired test.
#[derive(Debug, Clone, Serialize)]
pub struct Comparison {
    pub baseline: String,
    pub improved: usize,
    pub regressed: usize,
    pub unchanged: usize,
    /// Mean RR gain among improved queries (0 when none improved).
    pub mean_improvement: f64,
    /// Mean RR loss among regressed queries, reported positive.
    pub mean_regression: f64,
    pub t: Option<f64>,
    pub p: Option<f64>,
}

pub fn compare_runs(
    run_a: &RunFile,
    run_b: &RunFile,
    qrels: &BTreeMap<String, String>,
) -> Result<Comparison, EvalError> {
    if run_a.rankings.len() != run_b.rankings.len()
        || run_a
            .rankings
            .keys()
            .zip(run_b.rankings.keys())
            .any(|(x, y)| x != y)
    {
        return Err(EvalError::Protocol(
            "compared runs must cover the same eval split".into(),
        ));
    }
    let rr_a = reciprocal_ranks(run_a, qrels)?;
    let rr_b = reciprocal_ranks(run_b, qrels)?;
    let mut improved = 0usize;
    let mut regressed = 0usize;
    let mut unchanged = 0usize;
    let mut gain = 0.0;
    let mut loss = 0.0;
    for (qid, a) in &rr_a {
        let b = rr_b[qid];
        if a > &b {
            improved += 1;
            gain += a - b;
        } else if a < &b {
            regressed += 1;
            loss += b - a;
        } else {
            unchanged += 1;
        }
    }
    let test = paired_ttest(&rr_a, &rr_b)?;
    Ok(Comparison {
        baseline: run_b.system_tag.clone(),
        improved,
        regressed,
        unchanged,
        mean_improvement: if improved > 0 { gain / improved as f64 } else { 0.0 },
        mean_regression: if regressed > 0 { loss / regressed as f64 } else { 0.0 },
        t: test.t,
        p: test.p,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::RankedList;

    fn run_at_ranks(tag: &str, ranks: &[(&str, &str, usize)]) -> RunFile {
        let mut run = RunFile::new(tag);
        for (q, target, rank) in ranks {
            let entries = (1..=8usize).map(|i| {
                let doc = if i == *rank {
                    (*target).to_string()
                } else {
                    format!("x_{q}_{i}")
                };
                (doc, 1.0 - 0.1 * i as f64)
            });
            run.insert(*q, RankedList::from_scores(*q, entries.collect::<Vec<_>>(), 8));
        }
        run
    }

    fn qrels_for(ranks: &[(&str, &str, usize)]) -> BTreeMap<String, String> {
        ranks
            .iter()
            .map(|(q, t, _)| ((*q).to_string(), (*t).to_string()))
            .collect()
    }

    #[test]
    fn identical_runs_are_all_unchanged() {
        let spec = [("q1", "d1", 2), ("q2", "d2", 3), ("q3", "d3", 1)];
        let a = run_at_ranks("a", &spec);
        let b = run_at_ranks("b", &spec);
        let c = compare_runs(&a, &b, &qrels_for(&spec)).unwrap();
        assert_eq!((c.improved, c.regressed, c.unchanged), (0, 0, 3));
        assert_eq!(c.p, Some(1.0));
    }

    #[test]
    fn rank_two_to_one_counts_as_half_point_improvement() {
        let base = [("q1", "d1", 2), ("q2", "d2", 3)];
        let better = [("q1", "d1", 1), ("q2", "d2", 3)];
        let a = run_at_ranks("a", &better);
        let b = run_at_ranks("b", &base);
        let c = compare_runs(&a, &b, &qrels_for(&base)).unwrap();
        assert_eq!(c.improved, 1);
        assert_eq!(c.regressed, 0);
        assert!((c.mean_improvement - 0.5).abs() < 1e-12);
    }

    #[test]
    fn partition_covers_the_whole_split() {
        let base = [("q1", "d1", 2), ("q2", "d2", 3), ("q3", "d3", 5), ("q4", "d4", 1)];
        let other = [("q1", "d1", 1), ("q2", "d2", 6), ("q3", "d3", 5), ("q4", "d4", 2)];
        let a = run_at_ranks("a", &other);
        let b = run_at_ranks("b", &base);
        let c = compare_runs(&a, &b, &qrels_for(&base)).unwrap();
        assert_eq!(c.improved + c.regressed + c.unchanged, 4);
    }

    #[test]
    fn split_mismatch_is_an_error() {
        let a = run_at_ranks("a", &[("q1", "d1", 1)]);
        let b = run_at_ranks("b", &[("q2", "d2", 1)]);
        let mut qrels = BTreeMap::new();
        qrels.insert("q1".to_string(), "d1".to_string());
        assert!(compare_runs(&a, &b, &qrels).is_err());
    }
}
