//! JSONL corpus serialization.
//!
//! One record per line with a `kind` field: `doc`, `nbest`, `query`,
//! `qrel`, `split`. Serialization goes through `serde_json::Value`, whose
//! object keys are sorted, so a given bundle always produces identical
//! bytes.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde_json::{json, Value};

use super::{CorpusBundle, CorpusError, NBestSet, SplitAssignment, SyntheticDoc};

fn to_line(value: &Value) -> String {
    let mut s = value.to_string();
    s.push('\n');
    s
}

/// Writes the bundle as canonical JSONL.
pub fn export_bundle(bundle: &CorpusBundle, path: &Path) -> Result<(), CorpusError> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    for doc in &bundle.docs {
        let v = json!({
            "kind": "doc",
            "doc_id": doc.doc_id,
            "clean_tokens": doc.clean_tokens,
            "title_tokens": doc.title_tokens,
        });
        w.write_all(to_line(&v).as_bytes())?;
    }
    for (condition, sets) in &bundle.nbest {
        for (doc_id, set) in sets {
            let v = json!({
                "kind": "nbest",
                "condition": condition,
                "doc_id": doc_id,
                "hypotheses": set.hypotheses,
                "log_likelihoods": set.log_likelihoods,
                "wer_per_hyp": set.wer_per_hyp,
                "oracle_index": set.oracle_index,
                "underfilled": set.underfilled,
            });
            w.write_all(to_line(&v).as_bytes())?;
        }
    }
    for (query_id, tokens) in &bundle.queries {
        let v = json!({
            "kind": "query",
            "query_id": query_id,
            "tokens": tokens,
        });
        w.write_all(to_line(&v).as_bytes())?;
    }
    for (query_id, doc_id) in &bundle.qrels {
        let v = json!({
            "kind": "qrel",
            "query_id": query_id,
            "doc_id": doc_id,
        });
        w.write_all(to_line(&v).as_bytes())?;
    }
    let v = json!({
        "kind": "split",
        "train": bundle.split.train,
        "validation": bundle.split.validation,
        "eval": bundle.split.eval,
    });
    w.write_all(to_line(&v).as_bytes())?;
    w.flush()?;
    Ok(())
}

fn parse_err(line: usize, message: impl Into<String>) -> CorpusError {
    CorpusError::Parse {
        line,
        message: message.into(),
    }
}

fn field<'a>(v: &'a Value, name: &str, line: usize) -> Result<&'a Value, CorpusError> {
    v.get(name)
        .ok_or_else(|| parse_err(line, format!("missing field `{name}`")))
}

fn string_field(v: &Value, name: &str, line: usize) -> Result<String, CorpusError> {
    field(v, name, line)?
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| parse_err(line, format!("field `{name}` must be a string")))
}

fn token_list(v: &Value, name: &str, line: usize) -> Result<Vec<String>, CorpusError> {
    serde_json::from_value(field(v, name, line)?.clone())
        .map_err(|e| parse_err(line, format!("field `{name}`: {e}")))
}

/// Reads a bundle back from JSONL. Errors name the offending line.
pub fn import_bundle(path: &Path) -> Result<CorpusBundle, CorpusError> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut bundle = CorpusBundle::default();
    let mut saw_split = false;

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v: Value = serde_json::from_str(&line)
            .map_err(|e| parse_err(line_no, format!("invalid JSON: {e}")))?;
        let kind = string_field(&v, "kind", line_no)?;
        match kind.as_str() {
            "doc" => {
                bundle.docs.push(SyntheticDoc {
                    doc_id: string_field(&v, "doc_id", line_no)?,
                    clean_tokens: token_list(&v, "clean_tokens", line_no)?,
                    title_tokens: token_list(&v, "title_tokens", line_no)?,
                });
            }
            "nbest" => {
                let condition = string_field(&v, "condition", line_no)?;
                let doc_id = string_field(&v, "doc_id", line_no)?;
                let set = NBestSet {
                    doc_id: doc_id.clone(),
                    hypotheses: serde_json::from_value(
                        field(&v, "hypotheses", line_no)?.clone(),
                    )
                    .map_err(|e| parse_err(line_no, format!("hypotheses: {e}")))?,
                    log_likelihoods: serde_json::from_value(
                        field(&v, "log_likelihoods", line_no)?.clone(),
                    )
                    .map_err(|e| parse_err(line_no, format!("log_likelihoods: {e}")))?,
                    wer_per_hyp: serde_json::from_value(
                        field(&v, "wer_per_hyp", line_no)?.clone(),
                    )
                    .map_err(|e| parse_err(line_no, format!("wer_per_hyp: {e}")))?,
                    oracle_index: field(&v, "oracle_index", line_no)?
                        .as_u64()
                        .ok_or_else(|| parse_err(line_no, "oracle_index must be an integer"))?
                        as usize,
                    underfilled: v.get("underfilled").and_then(Value::as_bool).unwrap_or(false),
                };
                bundle
                    .nbest
                    .entry(condition)
                    .or_default()
                    .insert(doc_id, set);
            }
            "query" => {
                let query_id = string_field(&v, "query_id", line_no)?;
                bundle
                    .queries
                    .insert(query_id, token_list(&v, "tokens", line_no)?);
            }
            "qrel" => {
                let query_id = string_field(&v, "query_id", line_no)?;
                let doc_id = string_field(&v, "doc_id", line_no)?;
                bundle.qrels.insert(query_id, doc_id);
            }
            "split" => {
                bundle.split = SplitAssignment {
                    train: token_list(&v, "train", line_no)?,
                    validation: token_list(&v, "validation", line_no)?,
                    eval: token_list(&v, "eval", line_no)?,
                };
                saw_split = true;
            }
            other => {
                return Err(parse_err(line_no, format!("unknown record kind `{other}`")));
            }
        }
    }
    if bundle.docs.is_empty() {
        return Err(parse_err(0, "no doc records found"));
    }
    if !saw_split {
        return Err(parse_err(0, "no split record found"));
    }
    bundle.validate()?;
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{
        attach_nbest, generate_corpus, NoiseChannel, NoiseChannelSpec, CONDITION_STD,
    };

    #[test]
    fn round_trip_preserves_the_bundle() {
        let mut bundle = generate_corpus(12, 120, 9).unwrap();
        let channel =
            NoiseChannel::from_bundle(&bundle, NoiseChannelSpec::preset(0.3, 9)).unwrap();
        attach_nbest(&mut bundle, &channel, CONDITION_STD, 3, 16).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bundle.jsonl");
        export_bundle(&bundle, &path).unwrap();
        let back = import_bundle(&path).unwrap();
        assert_eq!(bundle, back);
    }

    #[test]
    fn export_bytes_are_canonical() {
        let bundle = generate_corpus(12, 120, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.jsonl");
        let b = dir.path().join("b.jsonl");
        export_bundle(&bundle, &a).unwrap();
        export_bundle(&bundle, &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn truncated_file_is_a_parse_error_naming_the_line() {
        let bundle = generate_corpus(12, 120, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bundle.jsonl");
        export_bundle(&bundle, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let cut = path.with_extension("cut");
        std::fs::write(&cut, &bytes[..bytes.len() / 2]).unwrap();
        match import_bundle(&cut) {
            Err(CorpusError::Parse { line, .. }) => assert!(line > 0),
            other => panic!("expected a parse error, got {other:?}"),
        }
    }
}
