//! Sentence-level BLEU over token-id sequences.

use std::collections::HashMap;

/// Highest n-gram order scored.
pub const BLEU_MAX_N: usize = 4;

/// Additive smoothing applied to each precision's numerator and denominator,
/// so exact matches stay exactly 1 and zero-match precisions become ~1e-9
/// instead of collapsing the geometric mean to zero.
pub const BLEU_SMOOTH_EPS: f64 = 1e-9;

/// Geometric mean of clipped n-gram precisions (n = 1..=4, uniform weights)
/// times the brevity penalty `exp(1 − r/c)` for candidates shorter than the
/// closest reference (ties prefer the shorter reference). An empty candidate
/// scores 0 by definition. N-gram orders longer than the candidate contribute
/// a neutral precision of 1; the brevity penalty carries the shortness cost.
pub fn bleu(candidate: &[usize], references: &[Vec<usize>]) -> f64 {
    assert!(!references.is_empty(), "bleu needs at least one reference");
    if candidate.is_empty() {
        return 0.0;
    }

    let mut log_sum = 0.0;
    for n in 1..=BLEU_MAX_N {
        let p = clipped_precision(candidate, references, n);
        log_sum += p.ln();
    }
    let geo = (log_sum / BLEU_MAX_N as f64).exp();

    let c = candidate.len();
    let r = closest_ref_len(c, references);
    let bp = if c >= r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    };
    bp * geo
}

/// Mean of sentence scores over a corpus of (candidate, references) pairs.
pub fn corpus_bleu(pairs: &[(Vec<usize>, Vec<Vec<usize>>)]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    pairs.iter().map(|(c, r)| bleu(c, r)).sum::<f64>() / pairs.len() as f64
}

fn ngram_counts(tokens: &[usize], n: usize) -> HashMap<&[usize], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

fn clipped_precision(candidate: &[usize], references: &[Vec<usize>], n: usize) -> f64 {
    if candidate.len() < n {
        return 1.0;
    }
    let cand_counts = ngram_counts(candidate, n);
    let ref_counts: Vec<HashMap<&[usize], usize>> =
        references.iter().map(|r| ngram_counts(r, n)).collect();

    let mut clipped = 0usize;
    for (gram, &count) in &cand_counts {
        let max_ref = ref_counts
            .iter()
            .map(|rc| rc.get(gram).copied().unwrap_or(0))
            .max()
            .unwrap_or(0);
        clipped += count.min(max_ref);
    }
    let total = candidate.len() - n + 1;
    (clipped as f64 + BLEU_SMOOTH_EPS) / (total as f64 + BLEU_SMOOTH_EPS)
}

fn closest_ref_len(c: usize, references: &[Vec<usize>]) -> usize {
    let mut best = references[0].len();
    for r in references.iter().skip(1) {
        let len = r.len();
        let (d_new, d_best) = (len.abs_diff(c), best.abs_diff(c));
        if d_new < d_best || (d_new == d_best && len < best) {
            best = len;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn refs(lists: &[&[usize]]) -> Vec<Vec<usize>> {
        lists.iter().map(|l| l.to_vec()).collect()
    }

    #[test]
    fn exact_match_scores_one() {
        let cand = vec![5, 6, 7, 8, 9];
        let r = refs(&[&[1, 2], &[5, 6, 7, 8, 9]]);
        assert_eq!(bleu(&cand, &r), 1.0);
    }

    #[test]
    fn disjoint_candidate_scores_zero_up_to_smoothing() {
        let cand = vec![20, 21, 22, 23];
        let r = refs(&[&[1, 2, 3, 4]]);
        assert!(bleu(&cand, &r) < 1e-6);
    }

    #[test]
    fn empty_candidate_is_zero_by_definition() {
        assert_eq!(bleu(&[], &refs(&[&[1, 2]])), 0.0);
    }

    #[test]
    fn brevity_penalty_hand_case() {
        // candidate "a b c d", reference "a b c d e":
        // all precisions (k + eps)/(k + eps) = 1, BP = exp(1 - 5/4)
        let cand = vec![10, 11, 12, 13];
        let r = refs(&[&[10, 11, 12, 13, 14]]);
        let expected = (1.0f64 - 5.0 / 4.0).exp();
        assert!((bleu(&cand, &r) - expected).abs() < 1e-6);
        assert!((expected - 0.7788).abs() < 1e-4);
    }

    #[test]
    fn clipping_counts_each_reference_ngram_once() {
        // candidate "the the the" vs reference "the cat": unigram "the"
        // appears 3 times but is clipped at 1.
        let the = 30usize;
        let cat = 31usize;
        let cand = vec![the, the, the];
        let r = refs(&[&[the, cat]]);
        let e = BLEU_SMOOTH_EPS;
        let p1 = (1.0 + e) / (3.0 + e);
        let p2 = e / (2.0 + e);
        let p3 = e / (1.0 + e);
        let p4 = 1.0; // candidate shorter than n: neutral
        let expected = ((p1.ln() + p2.ln() + p3.ln() + p4_ln(p4)) / 4.0).exp();
        assert!((bleu(&cand, &r) - expected).abs() < 1e-9);
    }

    fn p4_ln(p: f64) -> f64 {
        p.ln()
    }

    #[test]
    fn closest_reference_length_breaks_ties_short() {
        // candidate length 3, references of length 2 and 4: tie prefers 2,
        // so no brevity penalty applies.
        let cand = vec![1, 2, 3];
        let r = refs(&[&[1, 2], &[1, 2, 3, 4]]);
        let score_tie = bleu(&cand, &r);
        // against only the length-4 reference the penalty bites
        let score_long = bleu(&cand, &refs(&[&[1, 2, 3, 4]]));
        assert!(score_tie > score_long);
    }

    #[test]
    fn corpus_bleu_is_the_mean_of_sentence_scores() {
        let pairs = vec![
            (vec![1, 2, 3], refs(&[&[1, 2, 3]])),
            (vec![9, 9, 9], refs(&[&[1, 2, 3]])),
        ];
        let per: Vec<f64> = pairs.iter().map(|(c, r)| bleu(c, r)).collect();
        let want = (per[0] + per[1]) / 2.0;
        assert_eq!(corpus_bleu(&pairs), want);
    }

    proptest! {
        #[test]
        fn reference_permutation_invariance(
            cand in proptest::collection::vec(0usize..8, 1..10),
            mut rs in proptest::collection::vec(proptest::collection::vec(0usize..8, 1..10), 2..4),
        ) {
            let a = bleu(&cand, &rs);
            rs.reverse();
            let b = bleu(&cand, &rs);
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn adding_a_matching_reference_never_hurts(
            cand in proptest::collection::vec(0usize..8, 1..10),
            rs in proptest::collection::vec(proptest::collection::vec(0usize..8, 1..10), 1..3),
        ) {
            let before = bleu(&cand, &rs);
            let mut extended = rs.clone();
            extended.push(cand.clone());
            let after = bleu(&cand, &extended);
            prop_assert!(after >= before - 1e-12);
            prop_assert!((after - 1.0).abs() < 1e-12);
        }
    }
}
