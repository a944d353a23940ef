//! Corpus-level BLEU.
//!
//! Clipped n-gram matches and candidate n-gram totals are pooled over the
//! whole corpus before dividing, and the brevity penalty uses, for every
//! item, the reference length closest to the candidate length.

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, CorpusItem};
use crate::error::MetricError;
use crate::textcore::{ngram_counts, NGramCounts, MAX_NGRAM};

/// BLEU-1..4 for one corpus, with the statistics they were computed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuResult {
    /// `scores[n - 1]` is BLEU-n with uniform weights `1/n`.
    pub scores: [f64; MAX_NGRAM],
    pub clipped_precisions: [f64; MAX_NGRAM],
    pub brevity: f64,
}

impl BleuResult {
    pub fn score(&self, n: usize) -> f64 {
        self.scores[n - 1]
    }
}

/// Sufficient statistics for one item. Corpus statistics are their sum.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BleuStats {
    pub matched: [usize; MAX_NGRAM],
    pub total: [usize; MAX_NGRAM],
    pub candidate_len: usize,
    pub reference_len: usize,
}

impl std::ops::AddAssign for BleuStats {
    fn add_assign(&mut self, rhs: Self) {
        for n in 0..MAX_NGRAM {
            self.matched[n] += rhs.matched[n];
            self.total[n] += rhs.total[n];
        }
        self.candidate_len += rhs.candidate_len;
        self.reference_len += rhs.reference_len;
    }
}

/// Reference length closest to `candidate_len`; ties go to the shorter one.
pub fn closest_reference_length(candidate_len: usize, reference_lens: &[usize]) -> usize {
    reference_lens
        .iter()
        .copied()
        .min_by_key(|&r| (r.abs_diff(candidate_len), r))
        .unwrap_or(0)
}

pub fn item_stats(item: &CorpusItem) -> BleuStats {
    let mut stats = BleuStats {
        candidate_len: item.candidate().len(),
        reference_len: closest_reference_length(
            item.candidate().len(),
            &item.references().iter().map(|r| r.len()).collect::<Vec<_>>(),
        ),
        ..Default::default()
    };
    for n in 1..=MAX_NGRAM {
        let cand = ngram_counts(item.candidate(), n).expect("order in range");
        let refs: Vec<NGramCounts> = item
            .references()
            .iter()
            .map(|r| ngram_counts(r, n).expect("order in range"))
            .collect();
        stats.total[n - 1] = cand.total();
        stats.matched[n - 1] = cand
            .iter()
            .map(|(gram, count)| {
                let max_ref = refs.iter().map(|r| r.get(gram)).max().unwrap_or(0);
                count.min(max_ref)
            })
            .sum();
    }
    stats
}

pub fn corpus_stats(corpus: &Corpus) -> BleuStats {
    let mut total = BleuStats::default();
    for item in corpus.items() {
        total += item_stats(item);
    }
    total
}

/// Corpus clipped precision `CP_n`; 0 when no candidate has an n-gram.
pub fn clipped_precision(corpus: &Corpus, n: usize) -> Result<f64, MetricError> {
    if !(1..=MAX_NGRAM).contains(&n) {
        return Err(MetricError::NGramOrder(n));
    }
    Ok(precision_from(&corpus_stats(corpus), n))
}

fn precision_from(stats: &BleuStats, n: usize) -> f64 {
    let total = stats.total[n - 1];
    if total == 0 {
        0.0
    } else {
        stats.matched[n - 1] as f64 / total as f64
    }
}

/// Brevity penalty from total candidate length `l_c` and effective reference
/// length `l_s`.
pub fn brevity_from_lengths(l_c: usize, l_s: usize) -> f64 {
    if l_c > l_s {
        1.0
    } else if l_c == 0 {
        // l_s > 0: e^(1 - l_s / l_c) tends to 0; l_s == 0: e^0.
        if l_s == 0 {
            1.0
        } else {
            0.0
        }
    } else {
        (1.0 - l_s as f64 / l_c as f64).exp()
    }
}

pub fn brevity_penalty(corpus: &Corpus) -> f64 {
    let stats = corpus_stats(corpus);
    brevity_from_lengths(stats.candidate_len, stats.reference_len)
}

fn weighted_score(stats: &BleuStats, weights: &[f64]) -> f64 {
    let mut log_sum = 0.0;
    for (i, w) in weights.iter().enumerate() {
        let p = precision_from(stats, i + 1);
        if p == 0.0 {
            return 0.0;
        }
        log_sum += w * p.ln();
    }
    brevity_from_lengths(stats.candidate_len, stats.reference_len) * log_sum.exp()
}

/// BLEU-1..4 with uniform weights.
pub fn bleu(corpus: &Corpus) -> BleuResult {
    bleu_from_stats(&corpus_stats(corpus))
}

pub fn bleu_from_stats(stats: &BleuStats) -> BleuResult {
    let mut scores = [0.0; MAX_NGRAM];
    let mut clipped_precisions = [0.0; MAX_NGRAM];
    for n in 1..=MAX_NGRAM {
        clipped_precisions[n - 1] = precision_from(stats, n);
        scores[n - 1] = weighted_score(stats, &vec![1.0 / n as f64; n]);
    }
    BleuResult {
        scores,
        clipped_precisions,
        brevity: brevity_from_lengths(stats.candidate_len, stats.reference_len),
    }
}

/// BLEU-N for `N = weights.len()` with explicit weights.
pub fn bleu_weighted(corpus: &Corpus, weights: &[f64]) -> Result<f64, MetricError> {
    if weights.is_empty() || weights.len() > MAX_NGRAM {
        return Err(MetricError::WeightCount(weights.len()));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(MetricError::InvalidParameter("BLEU weights must be finite and non-negative".into()));
    }
    Ok(weighted_score(&corpus_stats(corpus), weights))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textcore::TokenSeq;
    use proptest::prelude::*;

    fn seq(s: &str) -> TokenSeq {
        TokenSeq::from_words(s.split_whitespace())
    }

    fn corpus(items: &[(&str, &[&str])]) -> Corpus {
        Corpus::new(
            items
                .iter()
                .map(|(c, refs)| CorpusItem::new(seq(c), refs.iter().map(|r| seq(r)).collect()).unwrap())
                .collect(),
        )
    }

    #[test]
    fn clipping_repeated_word() {
        let c = corpus(&[("the the the the", &["the cat"])]);
        assert_eq!(clipped_precision(&c, 1).unwrap(), 0.25);
        let r = bleu(&c);
        // l_c = 4 > l_s = 2
        assert_eq!(r.brevity, 1.0);
        assert_eq!(r.score(1), 0.25);
    }

    #[test]
    fn identity_is_one() {
        let c = corpus(&[("a b c d", &["a b c d"])]);
        for n in 1..=4 {
            assert_eq!(clipped_precision(&c, n).unwrap(), 1.0);
        }
        let r = bleu(&c);
        for n in 1..=4 {
            assert!((r.score(n) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn corpus_level_pooling() {
        let c = corpus(&[("a b", &["a b"]), ("c", &["d"])]);
        assert!((clipped_precision(&c, 1).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn brevity_cases() {
        assert_eq!(brevity_from_lengths(5, 5), 1.0);
        assert!((brevity_from_lengths(4, 8) - (-1.0f64).exp()).abs() < 1e-15);
        assert!((brevity_from_lengths(4, 8) - 0.367879).abs() < 1e-6);
        assert_eq!(brevity_from_lengths(9, 8), 1.0);
        assert_eq!(brevity_from_lengths(0, 3), 0.0);
        assert_eq!(brevity_from_lengths(0, 0), 1.0);
    }

    #[test]
    fn closest_length_ties_break_short() {
        assert_eq!(closest_reference_length(5, &[4, 6]), 4);
        assert_eq!(closest_reference_length(5, &[7, 3, 6]), 6);
        assert_eq!(closest_reference_length(5, &[9, 5]), 5);
    }

    #[test]
    fn zero_bigram_precision_gives_zero() {
        let c = corpus(&[("a x b", &["a b"])]);
        let r = bleu(&c);
        assert_eq!(r.clipped_precisions[1], 0.0);
        assert_eq!(r.score(2), 0.0);
        assert!(r.score(1) > 0.0);
    }

    #[test]
    fn weighted_matches_uniform() {
        let c = corpus(&[("a b c a", &["a b c", "c a b"])]);
        let uniform = bleu(&c);
        let w = bleu_weighted(&c, &[0.5, 0.5]).unwrap();
        assert!((w - uniform.score(2)).abs() < 1e-15);
        assert!(bleu_weighted(&c, &[]).is_err());
        assert!(bleu_weighted(&c, &[0.2; 5]).is_err());
        assert!(clipped_precision(&c, 0).is_err());
    }

    fn arb_corpus() -> impl Strategy<Value = Corpus> {
        let word = prop::sample::select(vec!["a", "b", "c", "d", "e"]);
        let sent = prop::collection::vec(word, 0..8).prop_map(TokenSeq::from_words);
        let item = (sent.clone(), prop::collection::vec(sent, 1..4))
            .prop_map(|(c, r)| CorpusItem::new(c, r).unwrap());
        prop::collection::vec(item, 1..6).prop_map(Corpus::new)
    }

    proptest! {
        #[test]
        fn scores_in_unit_interval(c in arb_corpus()) {
            let r = bleu(&c);
            for s in r.scores {
                prop_assert!((0.0..=1.0).contains(&s));
            }
            prop_assert!(r.brevity >= 0.0 && r.brevity <= 1.0);
        }

        #[test]
        fn permutation_invariant(c in arb_corpus(), seed in any::<u64>()) {
            let mut items = c.items().to_vec();
            let k = (seed as usize) % items.len();
            items.rotate_left(k);
            items.reverse();
            prop_assert_eq!(bleu(&c), bleu(&Corpus::new(items)));
        }

        #[test]
        fn duplication_invariant(c in arb_corpus()) {
            let doubled: Corpus = c.items().iter().chain(c.items()).cloned().collect();
            let (a, b) = (bleu(&c), bleu(&doubled));
            prop_assert_eq!(a.clipped_precisions, b.clipped_precisions);
            prop_assert_eq!(a.brevity, b.brevity);
        }
    }
}
