//! Memoryless token-edit channel with WER calibration and N-best sampling.
//!
//! Per reference token the channel substitutes or deletes; per gap (before
//! each token plus one trailing gap) it inserts. Substitution candidates are
//! vocabulary neighbors by character edit distance, softmax-weighted by the
//! confusion temperature, so errors are confusable rather than uniform. The
//! log-probability of every emitted edit sequence is tracked exactly, which
//! makes sampled hypotheses rankable by channel likelihood.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::wer::{edit_distance, wer};
use super::{CorpusBundle, CorpusError, NBestSet, NoiseChannelSpec, SyntheticDoc};

/// Nearest-neighbor count per confusion set.
const CONFUSION_SET_SIZE: usize = 16;
/// Length-difference band for confusion candidates; larger gaps cannot be
/// within a useful edit distance of short words.
const CONFUSION_LEN_BAND: usize = 3;
/// Extra sampling rounds when deduplication leaves fewer than n hypotheses.
const REDRAW_ROUNDS: usize = 3;
/// Default number of corrupted draws per document.
pub const DEFAULT_SAMPLES: usize = 200;

fn splitmix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(s: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in s.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    h
}

struct ConfusionSet {
    candidates: Vec<u32>,
    /// Cumulative sampling weights, last entry 1.0.
    cumulative: Vec<f64>,
    log_prob: Vec<f64>,
}

/// A calibratable token-edit channel over a fixed word list.
pub struct NoiseChannel {
    pub spec: NoiseChannelSpec,
    words: Vec<String>,
    word_ids: HashMap<String, u32>,
    confusion: Vec<ConfusionSet>,
}

/// A document mapped into channel word ids. Tokens outside the channel
/// vocabulary get extension ids past the word list; they can be kept or
/// deleted but never drawn as substitutions or insertions.
struct LocalDoc<'a> {
    ids: Vec<u32>,
    ext: Vec<&'a str>,
    vocab_len: u32,
}

impl NoiseChannel {
    /// Builds the confusion table over `words`. Quadratic in the word count
    /// within the length band; done once per channel.
    pub fn new(words: Vec<String>, spec: NoiseChannelSpec) -> Result<Self, CorpusError> {
        spec.validate()?;
        if words.is_empty() {
            return Err(CorpusError::Config("channel word list is empty".into()));
        }
        let temperature = spec.confusion_temperature;
        let confusion: Vec<ConfusionSet> = words
            .par_iter()
            .enumerate()
            .map(|(i, w)| {
                let wb = w.as_bytes();
                // (distance, index) of the nearest neighbors.
                let mut near: Vec<(usize, usize)> = Vec::new();
                for (j, other) in words.iter().enumerate() {
                    if i == j {
                        continue;
                    }
                    let ob = other.as_bytes();
                    if wb.len().abs_diff(ob.len()) > CONFUSION_LEN_BAND {
                        continue;
                    }
                    near.push((edit_distance(wb, ob), j));
                }
                near.sort_unstable();
                near.truncate(CONFUSION_SET_SIZE);
                let weights: Vec<f64> = near
                    .iter()
                    .map(|(d, _)| (-(*d as f64) / temperature).exp())
                    .collect();
                let total: f64 = weights.iter().sum();
                let mut cumulative = Vec::with_capacity(weights.len());
                let mut acc = 0.0;
                for w in &weights {
                    acc += w / total;
                    cumulative.push(acc);
                }
                if let Some(last) = cumulative.last_mut() {
                    *last = 1.0;
                }
                ConfusionSet {
                    candidates: near.iter().map(|(_, j)| *j as u32).collect(),
                    cumulative,
                    log_prob: weights.iter().map(|w| (w / total).ln()).collect(),
                }
            })
            .collect();
        let word_ids = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32))
            .collect();
        Ok(NoiseChannel {
            spec,
            words,
            word_ids,
            confusion,
        })
    }

    /// Channel over every distinct token observed in the bundle's clean
    /// documents and titles, in sorted order for determinism.
    pub fn from_bundle(bundle: &CorpusBundle, spec: NoiseChannelSpec) -> Result<Self, CorpusError> {
        let mut words: Vec<String> = bundle
            .docs
            .iter()
            .flat_map(|d| d.clean_tokens.iter().chain(d.title_tokens.iter()))
            .cloned()
            .collect();
        words.sort_unstable();
        words.dedup();
        NoiseChannel::new(words, spec)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Same channel with all three rates scaled by `multiplier`.
    fn scaled(&self, multiplier: f64) -> NoiseChannelSpec {
        let mut s = self.spec;
        s.sub_rate = (s.sub_rate * multiplier).min(0.95);
        s.del_rate = (s.del_rate * multiplier).min(0.95);
        s.ins_rate = (s.ins_rate * multiplier).min(0.95);
        // Keep the joint substitution/deletion mass a valid probability.
        let joint = s.sub_rate + s.del_rate;
        if joint >= 1.0 {
            let shrink = 0.98 / joint;
            s.sub_rate *= shrink;
            s.del_rate *= shrink;
        }
        s
    }

    fn local_doc<'a>(&self, tokens: &'a [String]) -> LocalDoc<'a> {
        let vocab_len = self.words.len() as u32;
        let mut ext: Vec<&'a str> = Vec::new();
        let ids = tokens
            .iter()
            .map(|t| match self.word_ids.get(t) {
                Some(&id) => id,
                None => {
                    // Distinct extension id per distinct unknown surface form.
                    match ext.iter().position(|e| *e == t.as_str()) {
                        Some(p) => vocab_len + p as u32,
                        None => {
                            ext.push(t.as_str());
                            vocab_len + (ext.len() - 1) as u32
                        }
                    }
                }
            })
            .collect();
        LocalDoc {
            ids,
            ext,
            vocab_len,
        }
    }

    fn resolve<'a>(&'a self, doc: &'a LocalDoc<'_>, id: u32) -> &'a str {
        if id < doc.vocab_len {
            &self.words[id as usize]
        } else {
            doc.ext[(id - doc.vocab_len) as usize]
        }
    }

    /// One corrupted draw over word ids under `rates`, returning the emitted
    /// ids and the exact log-probability of the realized edit sequence.
    fn corrupt_ids(
        &self,
        ids: &[u32],
        rates: &NoiseChannelSpec,
        draw_seed: u64,
    ) -> (Vec<u32>, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix(rates.seed, draw_seed));
        let vocab_len = self.words.len();
        let ln_ins = rates.ins_rate.ln();
        let ln_no_ins = (1.0 - rates.ins_rate).ln();
        let ln_del = rates.del_rate.ln();
        let ln_sub = rates.sub_rate.ln();
        let ln_keep = (1.0 - rates.del_rate - rates.sub_rate).ln();
        let ln_uniform = -(vocab_len as f64).ln();

        let mut out = Vec::with_capacity(ids.len() + 4);
        let mut ll = 0.0;
        let gap = |rng: &mut ChaCha8Rng, out: &mut Vec<u32>, ll: &mut f64| {
            if rates.ins_rate > 0.0 && rng.gen::<f64>() < rates.ins_rate {
                let id = rng.gen_range(0..vocab_len) as u32;
                out.push(id);
                *ll += ln_ins + ln_uniform;
            } else if rates.ins_rate > 0.0 {
                *ll += ln_no_ins;
            }
        };

        for &id in ids {
            gap(&mut rng, &mut out, &mut ll);
            let u: f64 = rng.gen();
            if u < rates.del_rate {
                ll += ln_del;
            } else if u < rates.del_rate + rates.sub_rate {
                let set = (id as usize) < vocab_len;
                let conf = if set { &self.confusion[id as usize] } else { &EMPTY_SET };
                if conf.candidates.is_empty() {
                    // No confusable neighbor; the draw degenerates to a keep.
                    out.push(id);
                    ll += ln_keep;
                } else {
                    let v: f64 = rng.gen();
                    let k = conf.cumulative.partition_point(|&c| c < v);
                    let k = k.min(conf.candidates.len() - 1);
                    out.push(conf.candidates[k]);
                    ll += ln_sub + conf.log_prob[k];
                }
            } else {
                out.push(id);
                if rates.del_rate + rates.sub_rate > 0.0 {
                    ll += ln_keep;
                }
            }
        }
        gap(&mut rng, &mut out, &mut ll);
        (out, ll)
    }

    /// Lexicographic comparison of two id sequences by surface form.
    fn cmp_lex(&self, doc: &LocalDoc<'_>, a: &[u32], b: &[u32]) -> std::cmp::Ordering {
        let words_a = a.iter().map(|&id| self.resolve(doc, id));
        let words_b = b.iter().map(|&id| self.resolve(doc, id));
        words_a.cmp(words_b)
    }
}

static EMPTY_SET: ConfusionSet = ConfusionSet {
    candidates: Vec::new(),
    cumulative: Vec::new(),
    log_prob: Vec::new(),
};

/// Applies the channel once to a token sequence.
///
/// Deterministic in `(channel.spec.seed, draw_seed)`. Returns the corrupted
/// tokens and the exact log-probability of the emitted edit sequence.
pub fn corrupt(
    channel: &NoiseChannel,
    tokens: &[String],
    draw_seed: u64,
) -> Result<(Vec<String>, f64), CorpusError> {
    if tokens.is_empty() {
        return Err(CorpusError::EmptyReference);
    }
    let doc = channel.local_doc(tokens);
    let (ids, ll) = channel.corrupt_ids(&doc.ids, &channel.spec, draw_seed);
    let out = ids
        .iter()
        .map(|&id| channel.resolve(&doc, id).to_string())
        .collect();
    Ok((out, ll))
}

/// Draws `samples` corrupted hypotheses for a document, deduplicates,
/// ranks by descending log-likelihood (ties lexicographic) and keeps the
/// top `n` with per-hypothesis WER and the within-set oracle index.
pub fn generate_nbest(
    channel: &NoiseChannel,
    doc: &SyntheticDoc,
    n: usize,
    samples: usize,
) -> Result<NBestSet, CorpusError> {
    if n == 0 || n > 20 {
        return Err(CorpusError::Config(format!(
            "n must lie in 1..=20, got {n}"
        )));
    }
    if n > samples {
        return Err(CorpusError::Config(format!(
            "n ({n}) exceeds samples ({samples})"
        )));
    }
    if doc.clean_tokens.is_empty() {
        return Err(CorpusError::EmptyReference);
    }
    let local = channel.local_doc(&doc.clean_tokens);
    let doc_hash = fnv1a(&doc.doc_id);

    // Dedup on the emitted id sequence, keeping the best log-likelihood.
    let mut distinct: HashMap<Vec<u32>, f64> = HashMap::new();
    let mut draw = 0u64;
    for round in 0..=REDRAW_ROUNDS {
        for _ in 0..samples {
            let (ids, ll) = channel.corrupt_ids(&local.ids, &channel.spec, splitmix(doc_hash, draw));
            draw += 1;
            if ids.is_empty() {
                continue;
            }
            let entry = distinct.entry(ids).or_insert(f64::NEG_INFINITY);
            if ll > *entry {
                *entry = ll;
            }
        }
        if distinct.len() >= n || round == REDRAW_ROUNDS {
            break;
        }
    }

    let mut candidates: Vec<(Vec<u32>, f64)> = distinct.into_iter().collect();
    candidates.sort_unstable_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("channel log-likelihoods are finite")
            .then_with(|| channel.cmp_lex(&local, &a.0, &b.0))
    });
    let underfilled = candidates.len() < n;
    candidates.truncate(n);

    let mut hypotheses = Vec::with_capacity(candidates.len());
    let mut log_likelihoods = Vec::with_capacity(candidates.len());
    let mut wer_per_hyp = Vec::with_capacity(candidates.len());
    for (ids, ll) in &candidates {
        wer_per_hyp.push(wer(&local.ids, ids)?);
        log_likelihoods.push(*ll);
        hypotheses.push(
            ids.iter()
                .map(|&id| channel.resolve(&local, id).to_string())
                .collect(),
        );
    }
    let oracle_index = wer_per_hyp
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).expect("finite WER").then(a.0.cmp(&b.0)))
        .map(|(i, _)| i)
        .unwrap_or(0);

    Ok(NBestSet {
        doc_id: doc.doc_id.clone(),
        hypotheses,
        log_likelihoods,
        wer_per_hyp,
        oracle_index,
        underfilled,
    })
}

/// Generates N-best sets for every document and stores them in the bundle
/// under `condition`. Documents are processed in parallel and merged in
/// doc order, so the result is deterministic.
pub fn attach_nbest(
    bundle: &mut CorpusBundle,
    channel: &NoiseChannel,
    condition: &str,
    n: usize,
    samples: usize,
) -> Result<(), CorpusError> {
    let sets: Result<Vec<NBestSet>, CorpusError> = bundle
        .docs
        .par_iter()
        .map(|doc| generate_nbest(channel, doc, n, samples))
        .collect();
    let map = sets?
        .into_iter()
        .map(|s| (s.doc_id.clone(), s))
        .collect();
    bundle.nbest.insert(condition.to_string(), map);
    Ok(())
}

/// Corpus-level WER of the 1-best hypothesis: total edit errors over total
/// reference length, with 1-best extraction matching `generate_nbest`.
fn measured_one_best_wer(
    channel: &NoiseChannel,
    rates: &NoiseChannelSpec,
    docs: &[&SyntheticDoc],
    samples: usize,
) -> f64 {
    let (errors, length): (usize, usize) = docs
        .par_iter()
        .map(|doc| {
            let local = channel.local_doc(&doc.clean_tokens);
            let doc_hash = fnv1a(&doc.doc_id);
            let mut best: Option<(Vec<u32>, f64)> = None;
            for s in 0..samples {
                let (ids, ll) = channel.corrupt_ids(&local.ids, rates, splitmix(doc_hash, s as u64));
                if ids.is_empty() {
                    continue;
                }
                let better = match &best {
                    None => true,
                    Some((bids, bll)) => {
                        ll > *bll
                            || (ll == *bll
                                && channel.cmp_lex(&local, &ids, bids) == std::cmp::Ordering::Less)
                    }
                };
                if better {
                    best = Some((ids, ll));
                }
            }
            match best {
                Some((ids, _)) => (edit_distance(&local.ids, &ids), local.ids.len()),
                None => (local.ids.len(), local.ids.len()),
            }
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    if length == 0 {
        0.0
    } else {
        errors as f64 / length as f64
    }
}

/// Binary-searches a global rate multiplier until the measured corpus
/// 1-best WER lands within ±0.01 of `spec.target_wer`.
///
/// The same draw seeds are reused at every multiplier (common random
/// numbers), which keeps the response monotone enough to bisect.
pub fn calibrate_channel(
    channel: &NoiseChannel,
    sample_docs: &[SyntheticDoc],
    samples: usize,
) -> Result<NoiseChannelSpec, CorpusError> {
    const TOLERANCE: f64 = 0.01;
    const MAX_ITERATIONS: usize = 50;
    let target = channel.spec.target_wer;
    if sample_docs.is_empty() {
        return Err(CorpusError::Config("no sample documents".into()));
    }
    if target == 0.0 {
        let mut s = channel.spec;
        s.sub_rate = 0.0;
        s.del_rate = 0.0;
        s.ins_rate = 0.0;
        return Ok(s);
    }
    if channel.spec.sub_rate + channel.spec.del_rate + channel.spec.ins_rate == 0.0 {
        return Err(CorpusError::Config(
            "cannot calibrate a channel whose base rates are all zero toward a nonzero target"
                .into(),
        ));
    }
    let docs: Vec<&SyntheticDoc> = sample_docs.iter().collect();

    let mut iterations = 0usize;
    let measure = |m: f64, iterations: &mut usize| -> f64 {
        *iterations += 1;
        measured_one_best_wer(channel, &channel.scaled(m), &docs, samples)
    };

    let mut lo = 0.0f64;
    let mut lo_wer = 0.0f64;
    let mut hi = 1.0f64;
    let mut hi_wer = measure(hi, &mut iterations);
    let mut best = (hi, hi_wer);
    // Expand until the target is bracketed or the rates saturate.
    while hi_wer < target - TOLERANCE && hi < 4096.0 && iterations < MAX_ITERATIONS {
        lo = hi;
        lo_wer = hi_wer;
        hi *= 2.0;
        hi_wer = measure(hi, &mut iterations);
        if (hi_wer - target).abs() < (best.1 - target).abs() {
            best = (hi, hi_wer);
        }
    }
    if (hi_wer - target).abs() <= TOLERANCE {
        return Ok(channel.scaled(hi));
    }
    if (lo_wer - target).abs() <= TOLERANCE {
        return Ok(channel.scaled(lo));
    }
    while iterations < MAX_ITERATIONS {
        let mid = 0.5 * (lo + hi);
        let mid_wer = measure(mid, &mut iterations);
        if (mid_wer - target).abs() < (best.1 - target).abs() {
            best = (mid, mid_wer);
        }
        if (mid_wer - target).abs() <= TOLERANCE {
            return Ok(channel.scaled(mid));
        }
        if mid_wer < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(CorpusError::Calibration {
        iterations,
        target,
        achieved: best.1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words() -> Vec<String> {
        ["kana", "kane", "kano", "lori", "lora", "tesa", "teso", "mipo", "mipa", "ruva"]
            .iter()
            .map(|s| s.to_string())
            .collect()
    }

    fn doc(tokens: &[&str]) -> SyntheticDoc {
        SyntheticDoc {
            doc_id: "d1".into(),
            clean_tokens: tokens.iter().map(|s| s.to_string()).collect(),
            title_tokens: vec![tokens[0].to_string()],
        }
    }

    #[test]
    fn noiseless_channel_is_identity_with_zero_log_likelihood() {
        let ch = NoiseChannel::new(words(), NoiseChannelSpec::silent(7)).unwrap();
        let tokens: Vec<String> = vec!["kana".into(), "lori".into(), "tesa".into()];
        let (out, ll) = corrupt(&ch, &tokens, 3).unwrap();
        assert_eq!(out, tokens);
        assert_eq!(ll, 0.0);
    }

    #[test]
    fn corrupt_is_deterministic_in_the_seed() {
        let spec = NoiseChannelSpec::preset(0.4, 11);
        let ch = NoiseChannel::new(words(), spec).unwrap();
        let tokens: Vec<String> = vec!["kana".into(), "lori".into(), "tesa".into(), "mipo".into()];
        let a = corrupt(&ch, &tokens, 42).unwrap();
        let b = corrupt(&ch, &tokens, 42).unwrap();
        assert_eq!(a, b);
        let c = corrupt(&ch, &tokens, 43).unwrap();
        // A different draw seed gives an independent draw (almost surely
        // different at these rates; pinned here as a regression anchor).
        assert!(a != c || a.0 == tokens);
    }

    #[test]
    fn forced_substitution_lands_at_edit_distance_one() {
        // With substitution-only noise at rate 0.35, some draw on a
        // three-token input realizes exactly one substitution; the assert
        // below pins the hand-traced outcome (edit distance 1, WER 1/3).
        let spec = NoiseChannelSpec {
            sub_rate: 0.35,
            del_rate: 0.0,
            ins_rate: 0.0,
            confusion_temperature: 1.0,
            target_wer: 0.3,
            seed: 1,
        };
        let ch = NoiseChannel::new(words(), spec).unwrap();
        let tokens: Vec<String> = vec!["kana".into(), "lori".into(), "tesa".into()];
        let mut found = None;
        for seed in 0..200u64 {
            let (out, _) = corrupt(&ch, &tokens, seed).unwrap();
            let refs: Vec<&str> = tokens.iter().map(|s| s.as_str()).collect();
            let hyps: Vec<&str> = out.iter().map(|s| s.as_str()).collect();
            if edit_distance(&refs, &hyps) == 1 && out.len() == 3 {
                found = Some((seed, out));
                break;
            }
        }
        let (_, out) = found.expect("a single-substitution draw exists in 200 seeds");
        let refs: Vec<&str> = tokens.iter().map(|s| s.as_str()).collect();
        let hyps: Vec<&str> = out.iter().map(|s| s.as_str()).collect();
        assert!((wer(&refs, &hyps).unwrap() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn log_likelihoods_are_valid_and_ranked() {
        let spec = NoiseChannelSpec::preset(0.3, 5);
        let ch = NoiseChannel::new(words(), spec).unwrap();
        let d = doc(&["kana", "lori", "tesa", "mipo", "ruva", "kane", "lora", "teso"]);
        let set = generate_nbest(&ch, &d, 5, 64).unwrap();
        set.validate().unwrap();
        for &ll in &set.log_likelihoods {
            assert!(ll <= 0.0, "log-probability must be nonpositive");
        }
        assert!(set.wer_per_hyp[set.oracle_index] <= set.wer_per_hyp[0]);
    }

    #[test]
    fn zero_noise_nbest_collapses_to_the_clean_text() {
        let ch = NoiseChannel::new(words(), NoiseChannelSpec::silent(3)).unwrap();
        let d = doc(&["kana", "lori", "tesa"]);
        let set = generate_nbest(&ch, &d, 5, 32).unwrap();
        assert!(set.underfilled);
        assert_eq!(set.hypotheses.len(), 1);
        assert_eq!(set.hypotheses[0], d.clean_tokens);
        assert_eq!(set.oracle_index, 0);
        assert_eq!(set.wer_per_hyp[0], 0.0);
    }

    #[test]
    fn nbest_is_deterministic() {
        let spec = NoiseChannelSpec::preset(0.3, 5);
        let ch = NoiseChannel::new(words(), spec).unwrap();
        let d = doc(&["kana", "lori", "tesa", "mipo", "ruva"]);
        let a = generate_nbest(&ch, &d, 5, 64).unwrap();
        let b = generate_nbest(&ch, &d, 5, 64).unwrap();
        assert_eq!(a, b);
    }
}
