//! Tokenization and the sequence primitives shared by every metric.

mod tokenize;

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::MetricError;

pub use tokenize::{is_removed_punctuation, ptb_tokens, tokenize, REMOVED_PUNCTUATION};

/// Largest n-gram order used by the metrics.
pub const MAX_NGRAM: usize = 4;

/// Default bound on the number of words allowed between the two halves of a
/// skip bigram.
pub const DEFAULT_MAX_GAP: usize = 4;

/// A preprocessed caption: lowercase tokens with punctuation removed.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSeq(Vec<String>);

impl TokenSeq {
    /// Builds a sequence from already tokenized words.
    ///
    /// Empty strings and tokens on the punctuation removal list are dropped so
    /// the result satisfies the same invariants as [`tokenize`] output. Case
    /// is left untouched.
    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        TokenSeq(
            words
                .into_iter()
                .map(Into::into)
                .filter(|w| !w.is_empty() && !is_removed_punctuation(w))
                .collect(),
        )
    }

    pub(crate) fn from_raw_tokens(tokens: Vec<String>) -> Self {
        TokenSeq(tokens)
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn into_tokens(self) -> Vec<String> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.0.iter().any(|t| t == word)
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }
}

impl fmt::Display for TokenSeq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join(" "))
    }
}

/// An ordered tuple of consecutive words.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NGram(Box<[String]>);

impl NGram {
    pub fn new<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        NGram(words.into_iter().map(Into::into).collect())
    }

    pub fn words(&self) -> &[String] {
        &self.0
    }

    pub fn order(&self) -> usize {
        self.0.len()
    }
}

impl From<&[String]> for NGram {
    fn from(words: &[String]) -> Self {
        NGram(words.into())
    }
}

/// Multiset of the contiguous n-grams of one sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NGramCounts {
    n: usize,
    counts: HashMap<NGram, usize>,
}

impl NGramCounts {
    pub fn order(&self) -> usize {
        self.n
    }

    pub fn get(&self, gram: &NGram) -> usize {
        self.counts.get(gram).copied().unwrap_or(0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&NGram, usize)> {
        self.counts.iter().map(|(k, &v)| (k, v))
    }

    pub fn keys(&self) -> impl Iterator<Item = &NGram> {
        self.counts.keys()
    }

    /// Number of distinct n-grams.
    pub fn distinct(&self) -> usize {
        self.counts.len()
    }

    /// Total number of n-gram occurrences, `max(0, |s| - n + 1)`.
    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// `Σ_k min(self_k, other_k)`.
    pub fn clipped_overlap(&self, other: &NGramCounts) -> usize {
        let (small, large) = if self.counts.len() <= other.counts.len() {
            (self, other)
        } else {
            (other, self)
        };
        small.iter().map(|(g, c)| c.min(large.get(g))).sum()
    }
}

/// Counts every contiguous n-gram of `s`. No stemming is applied.
pub fn ngram_counts(s: &TokenSeq, n: usize) -> Result<NGramCounts, MetricError> {
    if !(1..=MAX_NGRAM).contains(&n) {
        return Err(MetricError::NGramOrder(n));
    }
    let mut counts = HashMap::new();
    for window in s.tokens().windows(n) {
        *counts.entry(NGram::from(window)).or_insert(0) += 1;
    }
    Ok(NGramCounts { n, counts })
}

/// Ordered word pairs `(w_i, w_j)`, `i < j`, with at most `max_gap` words
/// between them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkipBigramCounts {
    max_gap: usize,
    counts: HashMap<(String, String), usize>,
}

impl SkipBigramCounts {
    pub fn max_gap(&self) -> usize {
        self.max_gap
    }

    pub fn get(&self, first: &str, second: &str) -> usize {
        self.counts
            .get(&(first.to_string(), second.to_string()))
            .copied()
            .unwrap_or(0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(String, String), usize)> {
        self.counts.iter().map(|(k, &v)| (k, v))
    }

    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn clipped_overlap(&self, other: &SkipBigramCounts) -> usize {
        self.counts
            .iter()
            .map(|(k, &c)| c.min(other.counts.get(k).copied().unwrap_or(0)))
            .sum()
    }
}

pub fn skip_bigrams(s: &TokenSeq, max_gap: usize) -> SkipBigramCounts {
    let tokens = s.tokens();
    let mut counts = HashMap::new();
    for i in 0..tokens.len() {
        let last = tokens.len().min(i.saturating_add(max_gap).saturating_add(2));
        for j in i + 1..last {
            *counts
                .entry((tokens[i].clone(), tokens[j].clone()))
                .or_insert(0) += 1;
        }
    }
    SkipBigramCounts { max_gap, counts }
}

/// Length of the longest common subsequence of two token sequences.
pub fn lcs_length(a: &TokenSeq, b: &TokenSeq) -> usize {
    let (a, b) = (a.tokens(), b.tokens());
    let (outer, inner) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    let mut prev = vec![0usize; inner.len() + 1];
    let mut cur = vec![0usize; inner.len() + 1];
    for x in outer {
        for (j, y) in inner.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[inner.len()]
}
