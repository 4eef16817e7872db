//! Word error rate via minimum-edit-distance alignment.

use super::CorpusError;

/// Levenshtein distance with unit costs for substitution, deletion and
/// insertion.
pub fn edit_distance<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> usize {
    let n = reference.len();
    let m = hypothesis.len();
    if n == 0 {
        return m;
    }
    if m == 0 {
        return n;
    }
    // Two-row DP over the hypothesis dimension.
    let mut prev: Vec<usize> = (0..=m).collect();
    let mut cur = vec![0usize; m + 1];
    for i in 1..=n {
        cur[0] = i;
        for j in 1..=m {
            let cost = usize::from(reference[i - 1] != hypothesis[j - 1]);
            cur[j] = (prev[j] + 1).min(cur[j - 1] + 1).min(prev[j - 1] + cost);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[m]
}

/// Word error rate: (substitutions + deletions + insertions) / |reference|.
///
/// The reference length is the denominator, so the rate can exceed 1 when
/// the hypothesis is much longer than the reference.
pub fn wer<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> Result<f64, CorpusError> {
    if reference.is_empty() {
        return Err(CorpusError::EmptyReference);
    }
    Ok(edit_distance(reference, hypothesis) as f64 / reference.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn identity_is_zero() {
        assert_eq!(wer(&toks("a b c"), &toks("a b c")).unwrap(), 0.0);
    }

    #[test]
    fn one_substitution_in_three() {
        assert!((wer(&toks("a b c"), &toks("a x c")).unwrap() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn insertions_can_push_wer_to_one() {
        // 2 insertions over 2 reference tokens.
        assert_eq!(wer(&toks("a b"), &toks("a x y b")).unwrap(), 1.0);
    }

    #[test]
    fn empty_reference_is_a_domain_error() {
        let empty: Vec<&str> = Vec::new();
        assert!(wer(&empty, &toks("a")).is_err());
    }

    #[test]
    fn matches_naive_recursion_on_short_sequences() {
        // Independent oracle: plain recursive definition of edit distance.
        fn naive(a: &[u8], b: &[u8]) -> usize {
            match (a.split_first(), b.split_first()) {
                (None, None) => 0,
                (None, Some(_)) => b.len(),
                (Some(_), None) => a.len(),
                (Some((x, ra)), Some((y, rb))) => {
                    let sub = naive(ra, rb) + usize::from(x != y);
                    let del = naive(ra, b) + 1;
                    let ins = naive(a, rb) + 1;
                    sub.min(del).min(ins)
                }
            }
        }
        let alphabet = [0u8, 1, 2];
        let mut cases = Vec::new();
        for len_a in 0..4usize {
            for len_b in 0..4usize {
                // Enumerate a deterministic sample of sequences.
                for pick in 0..9usize {
                    let a: Vec<u8> = (0..len_a).map(|i| alphabet[(i + pick) % 3]).collect();
                    let b: Vec<u8> = (0..len_b).map(|i| alphabet[(i * 2 + pick) % 3]).collect();
                    cases.push((a, b));
                }
            }
        }
        for (a, b) in cases {
            assert_eq!(edit_distance(&a, &b), naive(&a, &b), "a={a:?} b={b:?}");
        }
    }
}
