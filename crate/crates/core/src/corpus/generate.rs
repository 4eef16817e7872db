//! Synthetic known-item collection generator.
//!
//! Documents are topic-mixture word soup: the vocabulary is split into a
//! small common pool plus per-topic pools, each document draws from its
//! topic with a boosted per-document salient subset, and the title mixes
//! salient and topical words. Titles double as known-item queries, so the
//! lexical signal is deliberately partial: salient words recur across the
//! topic and only their combination identifies the document.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{CorpusBundle, CorpusError, SplitAssignment, SyntheticDoc};

#[derive(Debug, Clone)]
pub struct GeneratorConfig {
    pub num_docs: usize,
    pub vocab_size: usize,
    pub seed: u64,
    /// Eval split size; the paper protocol uses 500.
    pub eval_queries: usize,
    pub val_queries: usize,
    pub doc_len: (usize, usize),
    pub title_len: (usize, usize),
    /// Number of topic pools the non-common vocabulary is split into.
    pub topics: usize,
    /// Distinct salient words per document.
    pub salient_per_doc: usize,
}

impl GeneratorConfig {
    pub fn new(num_docs: usize, vocab_size: usize, seed: u64) -> Self {
        GeneratorConfig {
            num_docs,
            vocab_size,
            seed,
            eval_queries: 500,
            val_queries: 500,
            doc_len: (30, 150),
            title_len: (3, 12),
            topics: (vocab_size / 50).max(4),
            salient_per_doc: 8,
        }
    }
}

/// Pronounceable pseudo-words from consonant-vowel syllables. The small
/// syllable inventory guarantees plenty of near neighbors at character edit
/// distance 1-2, which is what the confusion channel feeds on.
fn make_words(vocab_size: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
    const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
    const VOWELS: &[u8] = b"aeiou";
    let mut words = Vec::with_capacity(vocab_size);
    let mut seen = std::collections::HashSet::new();
    while words.len() < vocab_size {
        let syllables = rng.gen_range(2..=4usize);
        let mut w = String::with_capacity(syllables * 2);
        for _ in 0..syllables {
            w.push(CONSONANTS[rng.gen_range(0..CONSONANTS.len())] as char);
            w.push(VOWELS[rng.gen_range(0..VOWELS.len())] as char);
        }
        if seen.insert(w.clone()) {
            words.push(w);
        }
    }
    words
}

/// Generates a bundle with the default configuration.
pub fn generate_corpus(
    num_docs: usize,
    vocab_size: usize,
    seed: u64,
) -> Result<CorpusBundle, CorpusError> {
    generate_corpus_with(&GeneratorConfig::new(num_docs, vocab_size, seed))
}

pub fn generate_corpus_with(config: &GeneratorConfig) -> Result<CorpusBundle, CorpusError> {
    if config.num_docs < 10 {
        return Err(CorpusError::Config(format!(
            "num_docs must be at least 10, got {}",
            config.num_docs
        )));
    }
    if config.vocab_size < 100 {
        return Err(CorpusError::Config(format!(
            "vocab_size must be at least 100, got {}",
            config.vocab_size
        )));
    }
    if config.doc_len.0 < 30 || config.doc_len.1 > 400 || config.doc_len.0 > config.doc_len.1 {
        return Err(CorpusError::Config(
            "doc_len must be a sub-range of 30..=400".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let words = make_words(config.vocab_size, &mut rng);

    // Vocabulary layout: a common pool then equal topic pools.
    let common_len = (config.vocab_size / 10).max(10);
    let topic_len = (config.vocab_size - common_len) / config.topics;
    if topic_len < config.salient_per_doc {
        return Err(CorpusError::Config(format!(
            "topic pools of {topic_len} words cannot host {} salient words; lower `topics`",
            config.salient_per_doc
        )));
    }
    let topic_pool = |t: usize| {
        let start = common_len + t * topic_len;
        start..start + topic_len
    };

    let id_width = config.num_docs.to_string().len().max(4);
    let mut docs = Vec::with_capacity(config.num_docs);
    let mut queries = std::collections::BTreeMap::new();
    let mut qrels = std::collections::BTreeMap::new();

    for d in 0..config.num_docs {
        let topic = d % config.topics;
        let pool = topic_pool(topic);
        let mut salient: Vec<usize> = Vec::with_capacity(config.salient_per_doc);
        while salient.len() < config.salient_per_doc {
            let w = rng.gen_range(pool.clone());
            if !salient.contains(&w) {
                salient.push(w);
            }
        }

        let len = rng.gen_range(config.doc_len.0..=config.doc_len.1);
        let mut clean = Vec::with_capacity(len);
        for _ in 0..len {
            let r: f64 = rng.gen();
            let w = if r < 0.35 {
                salient[rng.gen_range(0..salient.len())]
            } else if r < 0.75 {
                rng.gen_range(pool.clone())
            } else if r < 0.92 {
                rng.gen_range(0..common_len)
            } else {
                rng.gen_range(0..config.vocab_size)
            };
            clean.push(words[w].clone());
        }

        let title_len = rng.gen_range(config.title_len.0..=config.title_len.1);
        let mut title = Vec::with_capacity(title_len);
        for i in 0..title_len {
            let r: f64 = rng.gen();
            let w = if i < (title_len * 3).div_ceil(5) {
                salient[rng.gen_range(0..salient.len())]
            } else if r < 0.7 {
                rng.gen_range(pool.clone())
            } else {
                rng.gen_range(0..common_len)
            };
            title.push(words[w].clone());
        }
        // Known-item findability: the title must share a token with the text.
        if !title.iter().any(|t| clean.contains(t)) {
            title[0] = clean[rng.gen_range(0..clean.len())].clone();
        }

        let doc_id = format!("d{d:0id_width$}");
        let query_id = format!("q{d:0id_width$}");
        queries.insert(query_id.clone(), title.clone());
        qrels.insert(query_id, doc_id.clone());
        docs.push(SyntheticDoc {
            doc_id,
            clean_tokens: clean,
            title_tokens: title,
        });
    }

    // Shuffle query ids, then carve eval / validation / train.
    let mut query_ids: Vec<String> = queries.keys().cloned().collect();
    for i in (1..query_ids.len()).rev() {
        let j = rng.gen_range(0..=i);
        query_ids.swap(i, j);
    }
    let (eval_n, val_n) = if config.num_docs >= config.eval_queries + config.val_queries + 2 {
        (config.eval_queries, config.val_queries)
    } else {
        // Tiny corpora: fall back to quarters so every split is nonempty.
        let q = (config.num_docs / 4).max(1);
        (q, q)
    };
    let eval = query_ids[..eval_n].to_vec();
    let validation = query_ids[eval_n..eval_n + val_n].to_vec();
    let train = query_ids[eval_n + val_n..].to_vec();

    let bundle = CorpusBundle {
        docs,
        nbest: std::collections::BTreeMap::new(),
        queries,
        qrels,
        split: SplitAssignment {
            train,
            validation,
            eval,
        },
    };
    bundle.validate()?;
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_for_a_fixed_seed() {
        let a = generate_corpus(50, 200, 7).unwrap();
        let b = generate_corpus(50, 200, 7).unwrap();
        assert_eq!(a, b);
        let c = generate_corpus(50, 200, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn qrels_targets_exist_for_minimal_sizes() {
        let bundle = generate_corpus(10, 100, 1).unwrap();
        bundle.validate().unwrap();
        assert_eq!(bundle.docs.len(), 10);
        for target in bundle.qrels.values() {
            assert!(bundle.doc(target).is_some());
        }
    }

    #[test]
    fn default_eval_split_is_500_at_paper_scale() {
        let bundle = generate_corpus(2000, 2000, 7).unwrap();
        assert_eq!(bundle.split.eval.len(), 500);
        assert_eq!(bundle.split.validation.len(), 500);
        assert_eq!(bundle.split.train.len(), 1000);
    }

    #[test]
    fn rejects_undersized_inputs() {
        assert!(generate_corpus(9, 100, 1).is_err());
        assert!(generate_corpus(10, 99, 1).is_err());
    }

    #[test]
    fn doc_lengths_and_titles_respect_bounds() {
        let bundle = generate_corpus(40, 150, 3).unwrap();
        for d in &bundle.docs {
            assert!((30..=400).contains(&d.clean_tokens.len()));
            assert!((3..=12).contains(&d.title_tokens.len()));
            assert!(d.title_tokens.iter().any(|t| d.clean_tokens.contains(t)));
        }
    }
}
