//! Reciprocal rank and MRR.

use std::collections::BTreeMap;

use super::{EvalError, RunFile};

/// 1/rank of the single relevant document per query; 0 when the document
/// is absent from the ranked list. The run and the qrels must cover the
/// same query set.
pub fn reciprocal_ranks(
    run: &RunFile,
    qrels: &BTreeMap<String, String>,
) -> Result<BTreeMap<String, f64>, EvalError> {
    for qid in run.rankings.keys() {
        if !qrels.contains_key(qid) {
            return Err(EvalError::Protocol(format!(
                "run query {qid} has no qrel"
            )));
        }
    }
    let mut out = BTreeMap::new();
    for (qid, target) in qrels {
        let list = run.rankings.get(qid).ok_or_else(|| {
            EvalError::Protocol(format!("query {qid} missing from run {}", run.system_tag))
        })?;
        let rr = match list.rank_of(target) {
            Some(rank) => 1.0 / rank as f64,
            None => 0.0,
        };
        out.insert(qid.clone(), rr);
    }
    Ok(out)
}

/// Mean reciprocal rank over the query set.
pub fn mrr(run: &RunFile, qrels: &BTreeMap<String, String>) -> Result<f64, EvalError> {
    let rr = reciprocal_ranks(run, qrels)?;
    if rr.is_empty() {
        return Err(EvalError::Protocol("no queries to evaluate".into()));
    }
    Ok(rr.values().sum::<f64>() / rr.len() as f64)
}
