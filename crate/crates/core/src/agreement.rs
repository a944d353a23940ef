//! Word-level human agreement.
//!
//! One held-out caption per image is treated as a word predictor and judged
//! against the first `k` captions of the same image. Precision and recall are
//! weighted: a positive image (some of the `k` captions use the word) weighs
//! as many captions as use it, a negative image weighs one.
//!
//! The generative model assumes a concept is present in an image with
//! probability `q` and each captioner independently mentions it with
//! probability `p` when present (never when absent). Under that model the
//! weighted recall is exactly `p` and the weighted precision is
//! `pk / (pk + (1 - p)^k)`, independent of `q`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset_io::ImageId;
use crate::error::{DatasetError, MetricError};
use crate::textcore::TokenSeq;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementImage {
    pub image_id: ImageId,
    pub first_k: Vec<TokenSeq>,
    pub held_out: TokenSeq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementDataset {
    k: usize,
    images: Vec<AgreementImage>,
}

impl AgreementDataset {
    pub fn new(k: usize, images: Vec<AgreementImage>) -> Result<Self, MetricError> {
        if k == 0 {
            return Err(MetricError::InvalidParameter("k must be at least 1".into()));
        }
        if let Some(bad) = images.iter().find(|i| i.first_k.len() != k) {
            return Err(MetricError::InvalidParameter(format!(
                "image {} has {} reference captions, expected {k}",
                bad.image_id,
                bad.first_k.len()
            )));
        }
        Ok(Self { k, images })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn images(&self) -> &[AgreementImage] {
        &self.images
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordAgreementPoint {
    pub word: String,
    pub precision: f64,
    /// `None` when the word never occurs in any of the first `k` captions.
    pub recall: Option<f64>,
    pub tp_weight: f64,
    pub fp_count: f64,
    pub cw_weight: f64,
}

/// Per-image counts for one word: captions among the first `k` using it,
/// and whether the held-out caption uses it.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct ImageWordCount {
    cw: usize,
    predicted: bool,
}

fn caption_words(s: &TokenSeq) -> HashSet<&str> {
    s.iter().collect()
}

fn per_image_counts<'a>(image: &'a AgreementImage) -> HashMap<&'a str, ImageWordCount> {
    let mut counts: HashMap<&str, ImageWordCount> = HashMap::new();
    for caption in &image.first_k {
        for w in caption_words(caption) {
            counts.entry(w).or_default().cw += 1;
        }
    }
    for w in caption_words(&image.held_out) {
        counts.entry(w).or_default().predicted = true;
    }
    counts
}

#[derive(Debug, Clone, Copy, Default)]
struct Tally {
    tp: usize,
    fp: usize,
    cw: usize,
}

impl Tally {
    fn add(&mut self, c: ImageWordCount) {
        self.cw += c.cw;
        if c.predicted {
            if c.cw > 0 {
                self.tp += c.cw;
            } else {
                self.fp += 1;
            }
        }
    }

    fn precision(&self) -> f64 {
        if self.tp + self.fp == 0 {
            0.0
        } else {
            self.tp as f64 / (self.tp + self.fp) as f64
        }
    }

    fn recall(&self) -> Option<f64> {
        (self.cw > 0).then(|| self.tp as f64 / self.cw as f64)
    }
}

/// Weighted human precision and recall for every word of `vocab`.
pub fn empirical_agreement(
    data: &AgreementDataset,
    vocab: &[String],
) -> Result<Vec<WordAgreementPoint>, MetricError> {
    if vocab.is_empty() {
        return Err(MetricError::InvalidParameter("vocabulary is empty".into()));
    }
    let mut tallies: HashMap<&str, Tally> = vocab.iter().map(|w| (w.as_str(), Tally::default())).collect();
    for image in data.images() {
        for (w, c) in per_image_counts(image) {
            if let Some(t) = tallies.get_mut(w) {
                t.add(c);
            }
        }
    }
    Ok(vocab
        .iter()
        .map(|w| {
            let t = tallies[w.as_str()];
            WordAgreementPoint {
                word: w.clone(),
                precision: t.precision(),
                recall: t.recall(),
                tp_weight: t.tp as f64,
                fp_count: t.fp as f64,
                cw_weight: t.cw as f64,
            }
        })
        .collect())
}

/// The `n` most frequent words over every caption of the dataset, counting
/// token occurrences; ties are broken alphabetically.
pub fn top_words(data: &AgreementDataset, n: usize) -> Vec<String> {
    let mut freq: HashMap<&str, usize> = HashMap::new();
    for image in data.images() {
        for caption in image.first_k.iter().chain(std::iter::once(&image.held_out)) {
            for w in caption.iter() {
                *freq.entry(w).or_insert(0) += 1;
            }
        }
    }
    let mut words: Vec<(&str, usize)> = freq.into_iter().collect();
    words.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    words.into_iter().take(n).map(|(w, _)| w.to_string()).collect()
}

/// Model precision and recall `(pk / (pk + (1-p)^k), p)`.
pub fn model_curve(p: f64, k: usize) -> Result<(f64, f64), MetricError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(MetricError::InvalidParameter(format!("p must lie in [0, 1], got {p}")));
    }
    if k == 0 {
        return Err(MetricError::InvalidParameter("k must be at least 1".into()));
    }
    if p == 0.0 {
        return Ok((0.0, 0.0));
    }
    let pk = p * k as f64;
    Ok((pk / (pk + (1.0 - p).powi(k as i32)), p))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub p: f64,
    pub q: f64,
    pub k: usize,
}

impl ModelParams {
    pub fn new(p: f64, q: f64, k: usize) -> Result<Self, MetricError> {
        let params = Self { p, q, k };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), MetricError> {
        for (name, v) in [("p", self.p), ("q", self.q)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(MetricError::InvalidParameter(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if self.k == 0 {
            return Err(MetricError::InvalidParameter("k must be at least 1".into()));
        }
        Ok(())
    }
}

/// Per-image expectations `(E[cw], E[tp], E[fp]) = (kpq, kp²q, q(1-p)^k p)`.
pub fn expected_counts(params: &ModelParams) -> (f64, f64, f64) {
    let ModelParams { p, q, k } = *params;
    let k_f = k as f64;
    (k_f * p * q, k_f * p * p * q, q * (1.0 - p).powi(k as i32) * p)
}

/// Word used for simulated captions, and the filler used otherwise.
pub const SIMULATED_WORD: &str = "object";
pub const SIMULATED_FILLER: &str = "scene";

/// Draws `n` images under the model with a seeded generator. Each image has
/// `k` reference captions and one held-out caption; a caption is either
/// `[SIMULATED_FILLER, SIMULATED_WORD]` or `[SIMULATED_FILLER]`.
pub fn simulate(params: &ModelParams, n: usize, seed: u64) -> Result<AgreementDataset, MetricError> {
    params.validate()?;
    if n == 0 {
        return Err(MetricError::InvalidParameter("n must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let with = TokenSeq::from_words([SIMULATED_FILLER, SIMULATED_WORD]);
    let without = TokenSeq::from_words([SIMULATED_FILLER]);
    let mut images = Vec::with_capacity(n);
    for i in 0..n {
        let present = rng.random_bool(params.q);
        let mut draw = || {
            if present && rng.random_bool(params.p) {
                with.clone()
            } else {
                without.clone()
            }
        };
        let first_k: Vec<TokenSeq> = (0..params.k).map(|_| draw()).collect();
        let held_out = draw();
        images.push(AgreementImage { image_id: ImageId(i as i64), first_k, held_out });
    }
    AgreementDataset::new(params.k, images)
}

/// Recovers `p` from a word's weighted recall.
pub fn estimate_p(point: &WordAgreementPoint) -> Result<f64, MetricError> {
    point.recall.ok_or_else(|| MetricError::UndefinedRecall(point.word.clone()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemPrediction {
    pub image_id: ImageId,
    pub word: String,
    pub confidence: f64,
}

/// Precision at human recall.
///
/// Predictions for `word` are swept from the highest confidence down; all
/// predictions at or above a threshold count as positive. The weighted
/// precision is returned at the first threshold where the weighted recall
/// reaches the human recall for the word, or 0 if it never does.
pub fn phr(system: &[SystemPrediction], data: &AgreementDataset, word: &str) -> Result<f64, MetricError> {
    let human = empirical_agreement(data, &[word.to_string()])?.remove(0);
    let human_recall = estimate_p(&human)?;

    let cw_by_image: BTreeMap<ImageId, usize> = data
        .images()
        .iter()
        .map(|img| (img.image_id, img.first_k.iter().filter(|c| c.contains(word)).count()))
        .collect();

    let mut preds: Vec<&SystemPrediction> = system.iter().filter(|p| p.word == word).collect();
    if preds.is_empty() {
        return Err(MetricError::NoPredictions(word.to_string()));
    }
    for p in &preds {
        if !cw_by_image.contains_key(&p.image_id) {
            return Err(MetricError::UnknownImage(p.image_id.0));
        }
        if p.confidence.is_nan() {
            return Err(MetricError::InvalidParameter("confidence is NaN".into()));
        }
    }
    preds.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));

    let mut tally = Tally { cw: human.cw_weight as usize, ..Default::default() };
    let mut counted: HashSet<ImageId> = HashSet::new();
    let mut i = 0;
    while i < preds.len() {
        let threshold = preds[i].confidence;
        while i < preds.len() && preds[i].confidence == threshold {
            let id = preds[i].image_id;
            if counted.insert(id) {
                let cw = cw_by_image[&id];
                if cw > 0 {
                    tally.tp += cw;
                } else {
                    tally.fp += 1;
                }
            }
            i += 1;
        }
        if tally.recall().is_some_and(|r| r >= human_recall) {
            return Ok(tally.precision());
        }
    }
    Ok(0.0)
}

/// Parses a word to part-of-speech annotation file: one `word tag` pair per
/// line, separated by whitespace or a tab. Blank lines and `#` comments are
/// skipped.
pub fn parse_pos_annotations(text: &str) -> Result<BTreeMap<String, String>, DatasetError> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        match (parts.next(), parts.next(), parts.next()) {
            (Some(word), Some(tag), None) => {
                out.insert(word.to_lowercase(), tag.to_string());
            }
            _ => return Err(DatasetError::Record { index: i, message: format!("expected `word tag`, got {line:?}") }),
        }
    }
    Ok(out)
}

pub fn load_pos_annotations(path: impl AsRef<Path>) -> Result<BTreeMap<String, String>, DatasetError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|source| DatasetError::Io { path: path.display().to_string(), source })?;
    parse_pos_annotations(&text)
}

/// Groups points by tag; words without a tag go under `"unknown"`.
pub fn group_by_pos<'a>(
    points: &'a [WordAgreementPoint],
    pos: &BTreeMap<String, String>,
) -> BTreeMap<String, Vec<&'a WordAgreementPoint>> {
    let mut groups: BTreeMap<String, Vec<&WordAgreementPoint>> = BTreeMap::new();
    for p in points {
        let tag = pos.get(&p.word).cloned().unwrap_or_else(|| "unknown".to_string());
        groups.entry(tag).or_default().push(p);
    }
    groups
}
