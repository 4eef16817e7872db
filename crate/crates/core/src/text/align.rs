//! Minimum-edit-distance alignment of N-best hypotheses to the 1-best
//! anchor, producing fixed-length token frames for early fusion.

use super::{TextError, TokenSeq, FILLER};

/// One column of a pairwise alignment, named from the hypothesis side:
/// `DeleteInHyp` means the anchor token is missing from the hypothesis,
/// `InsertInHyp` means the hypothesis carries a token the anchor lacks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlignOp {
    Match,
    Substitute,
    DeleteInHyp,
    InsertInHyp,
}

/// N rows of exactly equal length; row 0 is the anchor (1-best). Gaps are
/// filled with [`FILLER`], and stripping fillers from row i recovers
/// hypothesis i verbatim.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignedFrame {
    rows: Vec<Vec<u32>>,
}

impl AlignedFrame {
    pub fn n(&self) -> usize {
        self.rows.len()
    }

    /// Common row length L.
    pub fn len(&self) -> usize {
        self.rows[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn rows(&self) -> &[Vec<u32>] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &[u32] {
        &self.rows[i]
    }

    /// Tokens of column `c`, top to bottom.
    pub fn column(&self, c: usize) -> Vec<u32> {
        self.rows.iter().map(|r| r[c]).collect()
    }

    /// Recovers hypothesis `i` by stripping fillers.
    pub fn strip_filler(&self, i: usize) -> Vec<u32> {
        self.rows[i]
            .iter()
            .copied()
            .filter(|&id| id != FILLER)
            .collect()
    }
}

/// Global minimum-edit-distance alignment with unit costs.
///
/// Ties are broken by operator preference match > substitute >
/// delete-in-hyp > insert-in-hyp, applied per cell, which pins one
/// canonical alignment for every input pair.
pub fn align_pair(anchor: &TokenSeq, hyp: &TokenSeq) -> Vec<AlignOp> {
    let a = &anchor.ids;
    let h = &hyp.ids;
    let n = a.len();
    let m = h.len();
    // dp[i][j] = (cost, op that reaches this cell).
    let mut dp = vec![vec![(0u32, None::<AlignOp>); m + 1]; n + 1];
    for i in 1..=n {
        dp[i][0] = (i as u32, Some(AlignOp::DeleteInHyp));
    }
    for j in 1..=m {
        dp[0][j] = (j as u32, Some(AlignOp::InsertInHyp));
    }
    for i in 1..=n {
        for j in 1..=m {
            let equal = a[i - 1] == h[j - 1];
            let diag = dp[i - 1][j - 1].0 + u32::from(!equal);
            let up = dp[i - 1][j].0 + 1;
            let left = dp[i][j - 1].0 + 1;
            let best = diag.min(up).min(left);
            let op = if diag == best {
                if equal {
                    AlignOp::Match
                } else {
                    AlignOp::Substitute
                }
            } else if up == best {
                AlignOp::DeleteInHyp
            } else {
                AlignOp::InsertInHyp
            };
            dp[i][j] = (best, Some(op));
        }
    }
    let mut ops = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    while let Some(op) = dp[i][j].1 {
        ops.push(op);
        match op {
            AlignOp::Match | AlignOp::Substitute => {
                i -= 1;
                j -= 1;
            }
            AlignOp::DeleteInHyp => i -= 1,
            AlignOp::InsertInHyp => j -= 1,
        }
    }
    ops.reverse();
    ops
}

/// Aligns N hypotheses (1-best first) into a fixed-length frame.
///
/// Every hypothesis is pairwise-aligned to the anchor. Frame columns are
/// the anchor positions plus one extra column per insertion slot: at each
/// anchor gap the number of inserted columns is the maximum insertion run
/// over hypotheses, and each hypothesis places its k-th inserted token in
/// the gap's k-th column. Rows lacking a token in a column hold [`FILLER`].
pub fn align_nbest(hyps: &[TokenSeq]) -> Result<AlignedFrame, TextError> {
    if hyps.is_empty() {
        return Err(TextError::Alignment("no hypotheses given".into()));
    }
    if let Some(k) = hyps.iter().position(|h| h.is_empty()) {
        return Err(TextError::Alignment(format!("hypothesis {k} is empty")));
    }
    let anchor = &hyps[0];
    let a_len = anchor.len();
    if hyps.len() == 1 {
        return Ok(AlignedFrame {
            rows: vec![anchor.ids.clone()],
        });
    }

    // Per secondary hypothesis: the token aligned to each anchor position
    // (None = deleted) and the insertion run at each of the a_len+1 gaps.
    struct Lane {
        aligned: Vec<Option<u32>>,
        inserts: Vec<Vec<u32>>,
    }
    let mut lanes = Vec::with_capacity(hyps.len() - 1);
    for hyp in &hyps[1..] {
        let ops = align_pair(anchor, hyp);
        let mut lane = Lane {
            aligned: vec![None; a_len],
            inserts: vec![Vec::new(); a_len + 1],
        };
        let (mut ai, mut hi) = (0usize, 0usize);
        for op in ops {
            match op {
                AlignOp::Match | AlignOp::Substitute => {
                    lane.aligned[ai] = Some(hyp.ids[hi]);
                    ai += 1;
                    hi += 1;
                }
                AlignOp::DeleteInHyp => ai += 1,
                AlignOp::InsertInHyp => {
                    lane.inserts[ai].push(hyp.ids[hi]);
                    hi += 1;
                }
            }
        }
        lanes.push(lane);
    }

    let gap_width = |g: usize| {
        lanes
            .iter()
            .map(|l| l.inserts[g].len())
            .max()
            .unwrap_or(0)
    };
    let total: usize = a_len + (0..=a_len).map(gap_width).sum::<usize>();
    let mut rows = vec![Vec::with_capacity(total); hyps.len()];
    for g in 0..=a_len {
        for slot in 0..gap_width(g) {
            rows[0].push(FILLER);
            for (r, lane) in lanes.iter().enumerate() {
                rows[r + 1].push(lane.inserts[g].get(slot).copied().unwrap_or(FILLER));
            }
        }
        if g < a_len {
            rows[0].push(anchor.ids[g]);
            for (r, lane) in lanes.iter().enumerate() {
                rows[r + 1].push(lane.aligned[g].unwrap_or(FILLER));
            }
        }
    }
    Ok(AlignedFrame { rows })
}

/// Keeps the first `max_len` columns of every row.
pub fn truncate_frame(frame: &AlignedFrame, max_len: usize) -> AlignedFrame {
    if frame.len() <= max_len {
        return frame.clone();
    }
    AlignedFrame {
        rows: frame
            .rows
            .iter()
            .map(|r| r[..max_len].to_vec())
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::TokenSource;

    fn seq(ids: &[u32]) -> TokenSeq {
        TokenSeq::new(ids.to_vec(), TokenSource::Clean)
    }

    /// Exhaustive oracle: minimum edit distance by plain recursion.
    fn brute_distance(a: &[u32], b: &[u32]) -> usize {
        match (a.split_first(), b.split_first()) {
            (None, None) => 0,
            (None, Some(_)) => b.len(),
            (Some(_), None) => a.len(),
            (Some((x, ra)), Some((y, rb))) => {
                let sub = brute_distance(ra, rb) + usize::from(x != y);
                let del = brute_distance(ra, b) + 1;
                let ins = brute_distance(a, rb) + 1;
                sub.min(del).min(ins)
            }
        }
    }

    fn op_cost(ops: &[AlignOp]) -> usize {
        ops.iter().filter(|o| **o != AlignOp::Match).count()
    }

    #[test]
    fn identity_aligns_as_all_matches() {
        let ops = align_pair(&seq(&[10, 11, 12]), &seq(&[10, 11, 12]));
        assert_eq!(ops, vec![AlignOp::Match; 3]);
    }

    #[test]
    fn deletion_example() {
        // anchor "a b c", hyp "a c"
        let ops = align_pair(&seq(&[10, 11, 12]), &seq(&[10, 12]));
        assert_eq!(
            ops,
            vec![AlignOp::Match, AlignOp::DeleteInHyp, AlignOp::Match]
        );
        assert_eq!(op_cost(&ops), brute_distance(&[10, 11, 12], &[10, 12]));
    }

    #[test]
    fn insertion_example() {
        // anchor "a c", hyp "a b c"
        let ops = align_pair(&seq(&[10, 12]), &seq(&[10, 11, 12]));
        assert_eq!(
            ops,
            vec![AlignOp::Match, AlignOp::InsertInHyp, AlignOp::Match]
        );
        assert_eq!(op_cost(&ops), brute_distance(&[10, 12], &[10, 11, 12]));
    }

    #[test]
    fn frame_matches_figure_structure() {
        // anchor "i can paint", hyp2 "i paint", hyp3 "i can paint"
        let frame = align_nbest(&[seq(&[20, 21, 22]), seq(&[20, 22]), seq(&[20, 21, 22])])
            .unwrap();
        assert_eq!(frame.n(), 3);
        assert_eq!(frame.len(), 3);
        assert_eq!(frame.row(0), &[20, 21, 22]);
        assert_eq!(frame.row(1), &[20, FILLER, 22]);
        assert_eq!(frame.row(2), &[20, 21, 22]);
        assert_eq!(frame.column(0), vec![20, 20, 20]);
    }

    #[test]
    fn anchor_gains_filler_only_from_insertions() {
        // anchor "a c", hyp "a b c" -> rows ["a --- c", "a b c"]
        let frame = align_nbest(&[seq(&[10, 12]), seq(&[10, 11, 12])]).unwrap();
        assert_eq!(frame.len(), 3);
        assert_eq!(frame.row(0), &[10, FILLER, 12]);
        assert_eq!(frame.row(1), &[10, 11, 12]);
    }

    #[test]
    fn identical_hypotheses_have_no_filler() {
        let frame =
            align_nbest(&[seq(&[1, 2, 3]), seq(&[1, 2, 3]), seq(&[1, 2, 3])]).unwrap();
        assert_eq!(frame.len(), 3);
        assert!(frame.rows().iter().all(|r| !r.contains(&FILLER)));
    }

    #[test]
    fn empty_hypothesis_is_an_error() {
        assert!(align_nbest(&[seq(&[1]), seq(&[])]).is_err());
        assert!(align_nbest(&[]).is_err());
    }

    #[test]
    fn truncate_drops_trailing_columns_and_is_idempotent() {
        let frame = align_nbest(&[seq(&[1, 2, 3, 4]), seq(&[1, 3, 4, 5])]).unwrap();
        let t = truncate_frame(&frame, frame.len() - 1);
        assert_eq!(t.len(), frame.len() - 1);
        assert_eq!(truncate_frame(&t, frame.len() - 1), t);
        let same = truncate_frame(&frame, frame.len() + 10);
        assert_eq!(same, frame);
    }

    #[test]
    fn row_recovery_and_edit_distance_on_random_pairs() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        for _ in 0..300 {
            let len_a = rng.gen_range(1..=8);
            let n = rng.gen_range(1..=4usize);
            let anchor: Vec<u32> = (0..len_a).map(|_| rng.gen_range(5..9)).collect();
            let mut hyps = vec![seq(&anchor)];
            for _ in 1..n {
                let len_h = rng.gen_range(1..=8);
                let h: Vec<u32> = (0..len_h).map(|_| rng.gen_range(5..9)).collect();
                hyps.push(seq(&h));
            }
            let frame = align_nbest(&hyps).unwrap();
            for (i, h) in hyps.iter().enumerate() {
                assert_eq!(frame.strip_filler(i), h.ids, "row {i} not recovered");
            }
            // Non-match columns against the anchor row equal the edit
            // distance, ignoring columns where both rows hold filler.
            for (i, h) in hyps.iter().enumerate().skip(1) {
                let mismatches = (0..frame.len())
                    .filter(|&c| {
                        let a = frame.row(0)[c];
                        let b = frame.row(i)[c];
                        !(a == FILLER && b == FILLER) && a != b
                    })
                    .count();
                assert_eq!(
                    mismatches,
                    brute_distance(&anchor, &h.ids),
                    "anchor={anchor:?} hyp={:?}",
                    h.ids
                );
            }
        }
    }
}
