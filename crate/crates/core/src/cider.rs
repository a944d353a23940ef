//! CIDEr and CIDEr-D.
//!
//! Sentences are represented per n-gram order as TF-IDF vectors, where term
//! frequency is normalised by the sentence's n-gram total and document
//! frequency counts images (not sentences) whose references contain the
//! n-gram. CIDEr averages cosine similarities with the references; CIDEr-D
//! clips the candidate weights at the reference weights, applies a Gaussian
//! penalty on the length difference and scales by 10.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::MetricError;
use crate::rouge::mean;
use crate::textcore::{ngram_counts, NGram, TokenSeq, MAX_NGRAM};

/// Image-level document frequencies over a reference corpus.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IdfTable {
    num_images: usize,
    doc_freq: HashMap<NGram, usize>,
    max_n: usize,
}

impl IdfTable {
    pub fn num_images(&self) -> usize {
        self.num_images
    }

    pub fn max_n(&self) -> usize {
        self.max_n
    }

    pub fn doc_freq(&self, gram: &NGram) -> usize {
        self.doc_freq.get(gram).copied().unwrap_or(0)
    }

    /// `ln(|I| / df)`, with unseen n-grams treated as occurring in one image.
    pub fn idf(&self, gram: &NGram) -> f64 {
        let df = self.doc_freq(gram).max(1);
        (self.num_images as f64 / df as f64).ln()
    }

    pub fn len(&self) -> usize {
        self.doc_freq.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_freq.is_empty()
    }
}

/// Builds document frequencies for n-gram orders `1..=max_n` from the
/// references of every image.
pub fn build_idf<'a, I>(images: I, max_n: usize) -> Result<IdfTable, MetricError>
where
    I: IntoIterator<Item = &'a [TokenSeq]>,
{
    if !(1..=MAX_NGRAM).contains(&max_n) {
        return Err(MetricError::NGramOrder(max_n));
    }
    let mut doc_freq: HashMap<NGram, usize> = HashMap::new();
    let mut num_images = 0;
    for refs in images {
        num_images += 1;
        let mut seen: std::collections::HashSet<NGram> = std::collections::HashSet::new();
        for r in refs {
            for n in 1..=max_n {
                for gram in ngram_counts(r, n)?.keys() {
                    seen.insert(gram.clone());
                }
            }
        }
        for gram in seen {
            *doc_freq.entry(gram).or_insert(0) += 1;
        }
    }
    if num_images == 0 {
        return Err(MetricError::EmptyCorpus);
    }
    Ok(IdfTable { num_images, doc_freq, max_n })
}

/// IDF over the references of a corpus.
pub fn build_idf_from_corpus(corpus: &Corpus, max_n: usize) -> Result<IdfTable, MetricError> {
    build_idf(corpus.items().iter().map(|i| i.references()), max_n)
}

/// TF-IDF weights `g_k` of one sentence for one n-gram order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TfIdfVector {
    n: usize,
    // ordered so that float sums are reproducible across processes
    weights: BTreeMap<NGram, f64>,
}

impl TfIdfVector {
    pub fn order(&self) -> usize {
        self.n
    }

    pub fn get(&self, gram: &NGram) -> f64 {
        self.weights.get(gram).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&NGram, f64)> {
        self.weights.iter().map(|(k, &v)| (k, v))
    }

    pub fn norm(&self) -> f64 {
        self.weights.values().map(|w| w * w).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.weights.values().all(|&w| w == 0.0)
    }

    pub fn dot(&self, other: &TfIdfVector) -> f64 {
        self.weights.iter().map(|(k, w)| w * other.get(k)).sum()
    }

    /// `min(self, other) · other`, componentwise minimum.
    pub fn clipped_dot(&self, other: &TfIdfVector) -> f64 {
        self.weights.iter().map(|(k, &w)| clipped_term(w, other.get(k))).sum()
    }
}

/// One component of the clipped numerator, `min(g_c, g_s) · g_s`.
pub fn clipped_term(candidate_weight: f64, reference_weight: f64) -> f64 {
    candidate_weight.min(reference_weight) * reference_weight
}

pub fn tfidf_vector(s: &TokenSeq, idf: &IdfTable, n: usize) -> Result<TfIdfVector, MetricError> {
    let counts = ngram_counts(s, n)?;
    let total = counts.total();
    let weights = if total == 0 {
        BTreeMap::new()
    } else {
        counts
            .iter()
            .map(|(gram, c)| (gram.clone(), c as f64 / total as f64 * idf.idf(gram)))
            .collect()
    };
    Ok(TfIdfVector { n, weights })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CiderParams {
    pub max_n: usize,
    pub sigma: f64,
    pub scale: f64,
}

impl Default for CiderParams {
    fn default() -> Self {
        Self { max_n: 4, sigma: 6.0, scale: 10.0 }
    }
}

impl CiderParams {
    pub fn validate(&self) -> Result<(), MetricError> {
        if !(1..=MAX_NGRAM).contains(&self.max_n) {
            return Err(MetricError::NGramOrder(self.max_n));
        }
        if !(self.sigma > 0.0) {
            return Err(MetricError::InvalidParameter(format!("sigma must be positive, got {}", self.sigma)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CiderVariant {
    Plain,
    D,
}

fn cosine(a: &TfIdfVector, b: &TfIdfVector) -> f64 {
    let denom = a.norm() * b.norm();
    if denom == 0.0 {
        0.0
    } else {
        a.dot(b) / denom
    }
}

/// Gaussian length penalty `exp(-(l_c - l_s)^2 / 2σ^2)`.
pub fn length_penalty(candidate_len: usize, reference_len: usize, sigma: f64) -> f64 {
    let d = candidate_len as f64 - reference_len as f64;
    (-(d * d) / (2.0 * sigma * sigma)).exp()
}

fn check(refs: &[TokenSeq], params: &CiderParams) -> Result<(), MetricError> {
    params.validate()?;
    if refs.is_empty() {
        return Err(MetricError::NoReferences);
    }
    Ok(())
}

/// Per-order terms `CIDEr_n`, n = 1..=max_n.
pub fn cider_terms(
    candidate: &TokenSeq,
    refs: &[TokenSeq],
    idf: &IdfTable,
    params: &CiderParams,
) -> Result<Vec<f64>, MetricError> {
    check(refs, params)?;
    (1..=params.max_n)
        .map(|n| {
            let c = tfidf_vector(candidate, idf, n)?;
            let mut sum = 0.0;
            for r in refs {
                sum += cosine(&c, &tfidf_vector(r, idf, n)?);
            }
            Ok(sum / refs.len() as f64)
        })
        .collect()
}

/// Per-order terms `CIDEr-D_n`, n = 1..=max_n.
pub fn cider_d_terms(
    candidate: &TokenSeq,
    refs: &[TokenSeq],
    idf: &IdfTable,
    params: &CiderParams,
) -> Result<Vec<f64>, MetricError> {
    check(refs, params)?;
    (1..=params.max_n)
        .map(|n| {
            let c = tfidf_vector(candidate, idf, n)?;
            let c_norm = c.norm();
            let mut sum = 0.0;
            for r in refs {
                let rv = tfidf_vector(r, idf, n)?;
                let denom = c_norm * rv.norm();
                if denom == 0.0 {
                    continue;
                }
                sum += length_penalty(candidate.len(), r.len(), params.sigma) * c.clipped_dot(&rv) / denom;
            }
            Ok(params.scale * sum / refs.len() as f64)
        })
        .collect()
}

fn combine(terms: &[f64]) -> f64 {
    let w = 1.0 / terms.len() as f64;
    terms.iter().map(|t| w * t).sum()
}

pub fn cider(candidate: &TokenSeq, refs: &[TokenSeq], idf: &IdfTable, params: &CiderParams) -> Result<f64, MetricError> {
    Ok(combine(&cider_terms(candidate, refs, idf, params)?))
}

pub fn cider_d(candidate: &TokenSeq, refs: &[TokenSeq], idf: &IdfTable, params: &CiderParams) -> Result<f64, MetricError> {
    Ok(combine(&cider_d_terms(candidate, refs, idf, params)?))
}

pub fn cider_per_item(
    corpus: &Corpus,
    idf: &IdfTable,
    params: &CiderParams,
    variant: CiderVariant,
) -> Result<Vec<f64>, MetricError> {
    corpus
        .items()
        .par_iter()
        .map(|item| match variant {
            CiderVariant::Plain => cider(item.candidate(), item.references(), idf, params),
            CiderVariant::D => cider_d(item.candidate(), item.references(), idf, params),
        })
        .collect()
}

/// Mean per-image score.
pub fn cider_corpus(
    corpus: &Corpus,
    idf: &IdfTable,
    params: &CiderParams,
    variant: CiderVariant,
) -> Result<f64, MetricError> {
    mean(&cider_per_item(corpus, idf, params, variant)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::CorpusItem;

    fn seq(s: &str) -> TokenSeq {
        TokenSeq::from_words(s.split_whitespace())
    }

    fn gram(s: &str) -> NGram {
        NGram::new(s.split_whitespace())
    }

    fn two_images() -> (Vec<Vec<TokenSeq>>, IdfTable) {
        let refs = vec![vec![seq("a b")], vec![seq("c d")]];
        let idf = build_idf(refs.iter().map(Vec::as_slice), 4).unwrap();
        (refs, idf)
    }

    #[test]
    fn document_frequency_counts_images() {
        let (_, idf) = two_images();
        assert_eq!(idf.num_images(), 2);
        assert_eq!(idf.doc_freq(&gram("a")), 1);
        assert!((idf.idf(&gram("a")) - 2f64.ln()).abs() < 1e-15);

        let refs = [vec![seq("a b"), seq("a b")], vec![seq("a c")]];
        let idf = build_idf(refs.iter().map(Vec::as_slice), 4).unwrap();
        // duplicated reference within one image counts once
        assert_eq!(idf.doc_freq(&gram("a b")), 1);
        // present in every image
        assert_eq!(idf.doc_freq(&gram("a")), 2);
        assert_eq!(idf.idf(&gram("a")), 0.0);
        // unseen n-gram uses a document count of one
        assert!((idf.idf(&gram("zzz")) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn tfidf_examples() {
        let (_, idf) = two_images();
        let v = tfidf_vector(&seq("a b"), &idf, 1).unwrap();
        assert!((v.get(&gram("a")) - 0.5 * 2f64.ln()).abs() < 1e-15);
        assert!((v.get(&gram("b")) - 0.5 * 2f64.ln()).abs() < 1e-15);
        assert!(tfidf_vector(&seq("a"), &idf, 2).unwrap().is_zero());

        let refs = [vec![seq("a")], vec![seq("a")]];
        let zero_idf = build_idf(refs.iter().map(Vec::as_slice), 4).unwrap();
        assert!(tfidf_vector(&seq("a a"), &zero_idf, 1).unwrap().is_zero());
    }

    #[test]
    fn cider_two_image_example() {
        let (refs, idf) = two_images();
        let p = CiderParams::default();
        let terms = cider_terms(&seq("a b"), &refs[0], &idf, &p).unwrap();
        assert!((terms[0] - 1.0).abs() < 1e-12 && (terms[1] - 1.0).abs() < 1e-12);
        assert_eq!(&terms[2..], &[0.0, 0.0]);
        assert!((cider(&seq("a b"), &refs[0], &idf, &p).unwrap() - 0.5).abs() < 1e-12);

        let d = cider_d_terms(&seq("a b"), &refs[0], &idf, &p).unwrap();
        assert!((d[0] - 10.0).abs() < 1e-12 && (d[1] - 10.0).abs() < 1e-12);
        assert!((cider_d(&seq("a b"), &refs[0], &idf, &p).unwrap() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn zero_cases() {
        let (refs, idf) = two_images();
        let p = CiderParams::default();
        assert_eq!(cider(&seq("x y"), &refs[0], &idf, &p).unwrap(), 0.0);
        assert_eq!(cider_d(&seq("x y"), &refs[0], &idf, &p).unwrap(), 0.0);

        let refs = [vec![seq("a b")], vec![seq("a b")]];
        let zero_idf = build_idf(refs.iter().map(Vec::as_slice), 4).unwrap();
        assert_eq!(cider(&seq("a b"), &refs[0], &zero_idf, &p).unwrap(), 0.0);
        assert_eq!(cider_d(&seq("a b"), &refs[0], &zero_idf, &p).unwrap(), 0.0);
        assert_eq!(cider(&seq("a"), &[], &zero_idf, &p), Err(MetricError::NoReferences));
    }

    #[test]
    fn gaussian_penalty_for_padding() {
        let (refs, idf) = two_images();
        let p = CiderParams::default();
        let no_penalty = CiderParams { sigma: f64::INFINITY, ..p };
        let padded = seq("a b q1 q2 q3 q4 q5 q6 q7 q8 q9 q10 q11 q12");
        let with = cider_d_terms(&padded, &refs[0], &idf, &p).unwrap();
        let without = cider_d_terms(&padded, &refs[0], &idf, &no_penalty).unwrap();
        for (w, wo) in with.iter().zip(&without) {
            assert!((w - wo * (-2f64).exp()).abs() < 1e-12);
        }
        assert!((length_penalty(14, 2, 6.0) - (-2f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn clipping_ignores_inflated_counts() {
        let (_, idf) = two_images();
        let r = tfidf_vector(&seq("a b"), &idf, 1).unwrap();
        let once = tfidf_vector(&seq("a b"), &idf, 1).unwrap();
        let many = tfidf_vector(&seq("a a a a a a a a a a b"), &idf, 1).unwrap();
        let a = gram("a");
        assert!(many.get(&a) > r.get(&a));
        assert_eq!(clipped_term(many.get(&a), r.get(&a)), clipped_term(once.get(&a), r.get(&a)));
    }

    #[test]
    fn corpus_mean() {
        let (refs, idf) = two_images();
        let p = CiderParams::default();
        let item = |c: &str, r: &[TokenSeq]| CorpusItem::new(seq(c), r.to_vec()).unwrap();
        let corpus = Corpus::new(vec![item("a b", &refs[0]), item("x y", &refs[1])]);
        let s = cider_corpus(&corpus, &idf, &p, CiderVariant::D).unwrap();
        assert!((s - 2.5).abs() < 1e-12);
        let one = Corpus::new(vec![item("a b", &refs[0])]);
        let doubled = Corpus::new(vec![item("a b", &refs[0]), item("a b", &refs[0])]);
        assert_eq!(
            cider_corpus(&one, &idf, &p, CiderVariant::Plain).unwrap(),
            cider(&seq("a b"), &refs[0], &idf, &p).unwrap()
        );
        assert_eq!(
            cider_corpus(&one, &idf, &p, CiderVariant::D).unwrap(),
            cider_corpus(&doubled, &idf, &p, CiderVariant::D).unwrap()
        );
        assert_eq!(cider_corpus(&Corpus::default(), &idf, &p, CiderVariant::D), Err(MetricError::EmptyCorpus));
    }
}
