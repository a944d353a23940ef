//! ROUGE-N, ROUGE-L and ROUGE-S.
//!
//! ROUGE-N pools counts over all references; ROUGE-L and ROUGE-S take the
//! maximum recall and maximum precision over references independently and
//! combine them with an F-measure weighted by `beta`.

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::MetricError;
use crate::textcore::{lcs_length, ngram_counts, skip_bigrams, TokenSeq, DEFAULT_MAX_GAP, MAX_NGRAM};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RougeParams {
    pub beta: f64,
    pub max_gap: usize,
}

impl Default for RougeParams {
    fn default() -> Self {
        Self { beta: 1.2, max_gap: DEFAULT_MAX_GAP }
    }
}

impl RougeParams {
    pub fn validate(&self) -> Result<(), MetricError> {
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(MetricError::InvalidParameter(format!("beta must be positive, got {}", self.beta)));
        }
        Ok(())
    }
}

/// `(1 + β²) R P / (R + β² P)`, or 0 when the denominator vanishes.
pub fn f_measure(recall: f64, precision: f64, beta: f64) -> f64 {
    let b2 = beta * beta;
    let denom = recall + b2 * precision;
    if denom == 0.0 {
        0.0
    } else {
        (1.0 + b2) * recall * precision / denom
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn rouge_n(candidate: &TokenSeq, refs: &[TokenSeq], n: usize) -> Result<f64, MetricError> {
    if refs.is_empty() {
        return Err(MetricError::NoReferences);
    }
    if !(1..=MAX_NGRAM).contains(&n) {
        return Err(MetricError::NGramOrder(n));
    }
    let cand = ngram_counts(candidate, n)?;
    let mut matched = 0;
    let mut total = 0;
    for r in refs {
        let rc = ngram_counts(r, n)?;
        matched += cand.clipped_overlap(&rc);
        total += rc.total();
    }
    Ok(ratio(matched, total))
}

pub fn rouge_l(candidate: &TokenSeq, refs: &[TokenSeq], beta: f64) -> Result<f64, MetricError> {
    if refs.is_empty() {
        return Err(MetricError::NoReferences);
    }
    if candidate.is_empty() {
        return Ok(0.0);
    }
    let mut recall: f64 = 0.0;
    let mut precision: f64 = 0.0;
    for r in refs {
        let l = lcs_length(candidate, r);
        recall = recall.max(ratio(l, r.len()));
        precision = precision.max(ratio(l, candidate.len()));
    }
    Ok(f_measure(recall, precision, beta))
}

pub fn rouge_s(
    candidate: &TokenSeq,
    refs: &[TokenSeq],
    beta: f64,
    max_gap: usize,
) -> Result<f64, MetricError> {
    if refs.is_empty() {
        return Err(MetricError::NoReferences);
    }
    let cand = skip_bigrams(candidate, max_gap);
    if cand.is_empty() {
        return Ok(0.0);
    }
    let mut recall: f64 = 0.0;
    let mut precision: f64 = 0.0;
    for r in refs {
        let rs = skip_bigrams(r, max_gap);
        let overlap = cand.clipped_overlap(&rs);
        recall = recall.max(ratio(overlap, rs.total()));
        precision = precision.max(ratio(overlap, cand.total()));
    }
    Ok(f_measure(recall, precision, beta))
}

/// Per-item ROUGE-L for every item of `corpus`, in order.
pub fn rouge_l_per_item(corpus: &Corpus, beta: f64) -> Result<Vec<f64>, MetricError> {
    corpus
        .items()
        .iter()
        .map(|item| rouge_l(item.candidate(), item.references(), beta))
        .collect()
}

/// Mean of per-item ROUGE-L.
pub fn rouge_l_corpus(corpus: &Corpus, beta: f64) -> Result<f64, MetricError> {
    mean(&rouge_l_per_item(corpus, beta)?)
}

pub(crate) fn mean(values: &[f64]) -> Result<f64, MetricError> {
    if values.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}
