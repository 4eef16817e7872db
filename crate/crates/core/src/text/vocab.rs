//! Vocabulary construction and whitespace tokenization.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::corpus::CorpusBundle;

use super::{TextError, TokenSeq, TokenSource, FILLER, NUM_SPECIALS};

const SPECIAL_FORMS: [&str; NUM_SPECIALS] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "---"];

/// Bijective token/id mapping with the five reserved specials at ids 0-4.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    id_to_token: Vec<String>,
    /// Non-special surface forms only; tokenization never emits specials.
    token_to_id: HashMap<String, u32>,
}

impl Vocabulary {
    fn with_tokens(tokens: impl IntoIterator<Item = String>) -> Self {
        let mut id_to_token: Vec<String> =
            SPECIAL_FORMS.iter().map(|s| s.to_string()).collect();
        let mut token_to_id = HashMap::new();
        for t in tokens {
            let id = id_to_token.len() as u32;
            token_to_id.insert(t.clone(), id);
            id_to_token.push(t);
        }
        Vocabulary {
            id_to_token,
            token_to_id,
        }
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        false // the specials are always present
    }

    /// Id of a non-special token, if known.
    pub fn id(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    pub fn is_special(id: u32) -> bool {
        (id as usize) < NUM_SPECIALS
    }

    pub fn filler_surface() -> &'static str {
        SPECIAL_FORMS[FILLER as usize]
    }

    /// Writes `token<TAB>id` lines, specials first.
    pub fn save(&self, path: &Path) -> Result<(), TextError> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        for (id, token) in self.id_to_token.iter().enumerate() {
            writeln!(w, "{token}\t{id}")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TextError> {
        let reader = BufReader::new(std::fs::File::open(path)?);
        let mut id_to_token = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let (token, id) = line.rsplit_once('\t').ok_or(TextError::VocabFile {
                line: idx + 1,
                message: "expected token<TAB>id".into(),
            })?;
            let id: usize = id.parse().map_err(|e| TextError::VocabFile {
                line: idx + 1,
                message: format!("bad id: {e}"),
            })?;
            if id != id_to_token.len() {
                return Err(TextError::VocabFile {
                    line: idx + 1,
                    message: format!("ids must be dense and ascending, got {id}"),
                });
            }
            id_to_token.push(token.to_string());
        }
        if id_to_token.len() < NUM_SPECIALS
            || SPECIAL_FORMS
                .iter()
                .zip(&id_to_token)
                .any(|(a, b)| a != b)
        {
            return Err(TextError::VocabFile {
                line: 1,
                message: "specials [PAD] [UNK] [CLS] [SEP] --- must occupy ids 0-4".into(),
            });
        }
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .skip(NUM_SPECIALS)
            .map(|(id, t)| (t.clone(), id as u32))
            .collect();
        Ok(Vocabulary {
            id_to_token,
            token_to_id,
        })
    }
}

/// Builds a vocabulary over every token observed in the bundle: clean
/// documents, queries and attached N-best hypotheses. Ids are assigned by
/// descending frequency, ties broken lexicographically, so construction is
/// deterministic.
pub fn build_vocab(corpus: &CorpusBundle, min_count: usize) -> Vocabulary {
    let mut counts: HashMap<String, usize> = HashMap::new();
    for doc in &corpus.docs {
        for t in &doc.clean_tokens {
            *counts.entry(t.to_lowercase()).or_insert(0) += 1;
        }
    }
    for tokens in corpus.queries.values() {
        for t in tokens {
            *counts.entry(t.to_lowercase()).or_insert(0) += 1;
        }
    }
    for sets in corpus.nbest.values() {
        for set in sets.values() {
            for hyp in &set.hypotheses {
                for t in hyp {
                    *counts.entry(t.to_lowercase()).or_insert(0) += 1;
                }
            }
        }
    }
    let mut entries: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(t, c)| *c >= min_count.max(1) && !SPECIAL_FORMS.contains(&t.as_str()))
        .collect();
    entries.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Vocabulary::with_tokens(entries.into_iter().map(|(t, _)| t))
}

/// Whitespace tokenization of a raw string: lowercase, split, map to ids,
/// unknowns to `UNK`. Never emits special ids.
pub fn tokenize(text: &str, vocab: &Vocabulary, source: TokenSource) -> TokenSeq {
    let ids = text
        .split_whitespace()
        .map(|t| vocab.id(&t.to_lowercase()).unwrap_or(super::UNK))
        .collect();
    TokenSeq::new(ids, source)
}

/// Tokenization of an already-split token list.
pub fn tokenize_tokens(tokens: &[String], vocab: &Vocabulary, source: TokenSource) -> TokenSeq {
    let ids = tokens
        .iter()
        .map(|t| vocab.id(&t.to_lowercase()).unwrap_or(super::UNK))
        .collect();
    TokenSeq::new(ids, source)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::generate_corpus;
    use crate::text::UNK;

    #[test]
    fn min_count_one_covers_every_corpus_token() {
        let bundle = generate_corpus(20, 120, 2).unwrap();
        let vocab = build_vocab(&bundle, 1);
        for doc in &bundle.docs {
            for t in &doc.clean_tokens {
                assert!(vocab.id(t).is_some(), "token {t} missing");
            }
        }
    }

    #[test]
    fn tokens_below_min_count_map_to_unk() {
        let bundle = generate_corpus(20, 120, 2).unwrap();
        let vocab = build_vocab(&bundle, 1);
        let huge = build_vocab(&bundle, usize::MAX);
        // With an impossible threshold nothing but specials survives.
        assert_eq!(huge.len(), NUM_SPECIALS);
        let seq = tokenize_tokens(&bundle.docs[0].clean_tokens, &huge, TokenSource::Clean);
        assert!(seq.ids.iter().all(|&id| id == UNK));
        // Sanity: the real vocabulary resolves the same tokens.
        let seq = tokenize_tokens(&bundle.docs[0].clean_tokens, &vocab, TokenSource::Clean);
        assert!(seq.ids.iter().all(|&id| id != UNK));
    }

    #[test]
    fn construction_is_deterministic() {
        let bundle = generate_corpus(20, 120, 2).unwrap();
        assert_eq!(build_vocab(&bundle, 1), build_vocab(&bundle, 1));
    }

    #[test]
    fn tokenize_lowercases_and_never_emits_specials() {
        let bundle = generate_corpus(20, 120, 2).unwrap();
        let vocab = build_vocab(&bundle, 1);
        let word = bundle.docs[0].clean_tokens[0].clone();
        let upper = word.to_uppercase();
        let seq = tokenize(&format!("{upper} --- [CLS]"), &vocab, TokenSource::Query);
        assert_eq!(seq.ids[0], vocab.id(&word).unwrap());
        assert_eq!(seq.ids[1], UNK, "--- must not resolve to the filler id");
        assert_eq!(seq.ids[2], UNK);
    }

    #[test]
    fn empty_string_gives_empty_sequence() {
        let bundle = generate_corpus(20, 120, 2).unwrap();
        let vocab = build_vocab(&bundle, 1);
        assert!(tokenize("", &vocab, TokenSource::Query).is_empty());
    }

    #[test]
    fn vocab_file_round_trip() {
        let bundle = generate_corpus(20, 120, 2).unwrap();
        let vocab = build_vocab(&bundle, 1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.tsv");
        vocab.save(&path).unwrap();
        assert_eq!(Vocabulary::load(&path).unwrap(), vocab);
    }
}
