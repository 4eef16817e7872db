//! TREC-format run files and qrels.
//!
//! Run lines are `query_id Q0 doc_id rank score system_tag`, rank starting
//! at 1. Scores are written with Rust's shortest round-trip float
//! formatting, so write-then-read preserves them bit-exactly.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::index::RankedList;

use super::{EvalError, RunFile};

pub fn write_run(run: &RunFile, path: &Path) -> Result<(), EvalError> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    let tag = if run.system_tag.is_empty() {
        "run"
    } else {
        &run.system_tag
    };
    let tag = tag.replace(char::is_whitespace, "_");
    for (query_id, list) in &run.rankings {
        for (rank, (doc_id, score)) in list.entries.iter().enumerate() {
            writeln!(w, "{query_id} Q0 {doc_id} {} {score} {tag}", rank + 1)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_run(path: &Path) -> Result<RunFile, EvalError> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut tag: Option<String> = None;
    // query → (rank, doc, score); ranks validated dense per query.
    let mut per_query: BTreeMap<String, Vec<(usize, String, f64)>> = BTreeMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 6 {
            return Err(EvalError::RunFile {
                line: line_no,
                message: format!("expected 6 columns, got {}", cols.len()),
            });
        }
        let rank: usize = cols[3].parse().map_err(|e| EvalError::RunFile {
            line: line_no,
            message: format!("bad rank: {e}"),
        })?;
        let score: f64 = cols[4].parse().map_err(|e| EvalError::RunFile {
            line: line_no,
            message: format!("bad score: {e}"),
        })?;
        match &tag {
            None => tag = Some(cols[5].to_string()),
            Some(t) if t != cols[5] => {
                return Err(EvalError::RunFile {
                    line: line_no,
                    message: format!("mixed system tags `{t}` and `{}`", cols[5]),
                });
            }
            _ => {}
        }
        per_query
            .entry(cols[0].to_string())
            .or_default()
            .push((rank, cols[2].to_string(), score));
    }
    let mut run = RunFile::new(tag.unwrap_or_default());
    for (query_id, mut entries) in per_query {
        entries.sort_by_key(|(rank, _, _)| *rank);
        for (want, (rank, _, _)) in entries.iter().enumerate() {
            if *rank != want + 1 {
                return Err(EvalError::RunFile {
                    line: 0,
                    message: format!(
                        "query {query_id}: ranks must be dense from 1, found {rank} at position {}",
                        want + 1
                    ),
                });
            }
        }
        let list = RankedList {
            query_id: query_id.clone(),
            entries: entries.into_iter().map(|(_, d, s)| (d, s)).collect(),
        };
        run.rankings.insert(query_id, list);
    }
    Ok(run)
}

/// Qrels lines: `query_id 0 doc_id 1` (one relevant document per query).
pub fn write_qrels(qrels: &BTreeMap<String, String>, path: &Path) -> Result<(), EvalError> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for (query_id, doc_id) in qrels {
        writeln!(w, "{query_id} 0 {doc_id} 1")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_qrels(path: &Path) -> Result<BTreeMap<String, String>, EvalError> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut qrels = BTreeMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 4 {
            return Err(EvalError::RunFile {
                line: idx + 1,
                message: format!("expected 4 qrels columns, got {}", cols.len()),
            });
        }
        if cols[3] != "0" {
            qrels.insert(cols[0].to_string(), cols[2].to_string());
        }
    }
    Ok(qrels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_run() -> RunFile {
        let mut run = RunFile::new("bm25 clean");
        run.insert(
            "q01",
            RankedList::from_scores(
                "q01",
                vec![
                    ("d2".to_string(), 1.5),
                    ("d1".to_string(), 0.333333333333333314829616256247),
                    ("d3".to_string(), -0.25),
                ],
                10,
            ),
        );
        run.insert(
            "q02",
            RankedList::from_scores("q02", vec![("d9".to_string(), 7.125)], 10),
        );
        run
    }

    #[test]
    fn round_trip_preserves_rankings_and_scores_bit_exactly() {
        let run = sample_run();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.trec");
        write_run(&run, &path).unwrap();
        let back = read_run(&path).unwrap();
        assert_eq!(back.system_tag, "bm25_clean");
        assert_eq!(back.rankings, run.rankings);
        for (q, list) in &run.rankings {
            for ((d1, s1), (d2, s2)) in list.entries.iter().zip(&back.rankings[q].entries) {
                assert_eq!(d1, d2);
                assert_eq!(s1.to_bits(), s2.to_bits());
            }
        }
    }

    #[test]
    fn writes_are_deterministic() {
        let run = sample_run();
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.trec");
        let b = dir.path().join("b.trec");
        write_run(&run, &a).unwrap();
        write_run(&run, &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn malformed_lines_are_rejected_with_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.trec");
        std::fs::write(&path, "q01 Q0 d1 1 0.5 tag\nq01 Q0 d2 oops 0.4 tag\n").unwrap();
        match read_run(&path) {
            Err(EvalError::RunFile { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected run-file error, got {other:?}"),
        }
    }

    #[test]
    fn qrels_round_trip() {
        let mut qrels = BTreeMap::new();
        qrels.insert("q01".to_string(), "d4".to_string());
        qrels.insert("q02".to_string(), "d1".to_string());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("qrels.txt");
        write_qrels(&qrels, &path).unwrap();
        assert_eq!(read_qrels(&path).unwrap(), qrels);
    }
}
