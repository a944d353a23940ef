//! The scoring entry point shared by the command line and the server.
//!
//! [`score`] validates a submission against a reference set, tokenizes the
//! candidates, builds the IDF table from the references of the split and
//! runs every configured metric. The result is a [`MetricReport`] whose JSON
//! form ([`MetricReport::to_json_string`]) is canonical: identical inputs
//! give identical bytes.

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agreement::{AgreementDataset, AgreementImage};
use crate::bleu::bleu;
use crate::cider::{build_idf, cider_per_item, CiderParams, CiderVariant};
use crate::corpus::{Corpus, CorpusItem};
use crate::dataset_io::{validate, ImageId, ReferenceStore, Submission, SubmissionEntry};
use crate::error::{DatasetError, EngineError, MetricError};
use crate::meteor::{meteor_per_item, score_from_stats, MeteorParams, MeteorStats, SynonymLexicon};
use crate::rouge::{mean, rouge_l_per_item, rouge_n, rouge_s, RougeParams};
use crate::textcore::{tokenize, TokenSeq, MAX_NGRAM};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub rouge: RougeParams,
    pub meteor: MeteorParams,
    pub cider: CiderParams,
    /// Extra ROUGE-N orders to report as `ROUGE-<n>`.
    pub rouge_n: Vec<usize>,
    pub rouge_s: bool,
    /// Also report plain CIDEr under `CIDEr`.
    pub cider_plain: bool,
    #[serde(skip)]
    pub lexicon: Arc<SynonymLexicon>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            rouge: RougeParams::default(),
            meteor: MeteorParams::default(),
            cider: CiderParams::default(),
            rouge_n: Vec::new(),
            rouge_s: false,
            cider_plain: false,
            lexicon: Arc::new(SynonymLexicon::empty()),
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), MetricError> {
        self.rouge.validate()?;
        self.meteor.validate()?;
        self.cider.validate()?;
        if let Some(&n) = self.rouge_n.iter().find(|n| !(1..=MAX_NGRAM).contains(*n)) {
            return Err(MetricError::NGramOrder(n));
        }
        Ok(())
    }

    /// Metric keys the report will contain, in report order.
    pub fn metric_keys(&self) -> Vec<String> {
        let mut keys: Vec<String> = (1..=4).map(|n| format!("BLEU-{n}")).collect();
        keys.extend(["ROUGE-L", "METEOR", "CIDEr-D"].map(String::from));
        keys.extend(self.rouge_n.iter().map(|n| format!("ROUGE-{n}")));
        if self.rouge_s {
            keys.push("ROUGE-S".into());
        }
        if self.cider_plain {
            keys.push("CIDEr".into());
        }
        keys.sort();
        keys.dedup();
        keys
    }

    fn lexicon_hash(&self) -> String {
        let classes = serde_json::to_string(&self.lexicon.classes()).expect("classes serialize");
        hex::encode(Sha256::digest(classes.as_bytes()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageScores {
    pub image_id: ImageId,
    #[serde(rename = "ROUGE-L")]
    pub rouge_l: f64,
    #[serde(rename = "METEOR")]
    pub meteor: f64,
    #[serde(rename = "CIDEr-D")]
    pub cider_d: f64,
    pub meteor_stats: MeteorStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub reference_hash: String,
    pub num_images: usize,
    pub params: EngineConfig,
    pub lexicon_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub split: String,
    pub scores: BTreeMap<String, f64>,
    pub per_image: Vec<ImageScores>,
    pub provenance: Provenance,
}

impl MetricReport {
    /// Compact canonical JSON.
    pub fn to_json_string(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, DatasetError> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn get(&self, metric: &str) -> Option<f64> {
        self.scores.get(metric).copied()
    }
}

/// Pairs each reference image with its candidate, in ascending image id.
/// The submission must already be valid for `refs`.
fn build_corpus(sub: &Submission, refs: &ReferenceStore) -> Result<(Vec<ImageId>, Corpus), MetricError> {
    let by_id: BTreeMap<ImageId, &str> = sub.entries().iter().map(|e| (e.image_id, e.caption.as_str())).collect();
    let ids: Vec<ImageId> = refs.ids().collect();
    let items: Vec<CorpusItem> = ids
        .par_iter()
        .map(|id| {
            let candidate = tokenize(by_id.get(id).copied().unwrap_or(""));
            CorpusItem::new(candidate, refs.tokens(*id).unwrap_or_default().to_vec())
        })
        .collect::<Result<_, _>>()?;
    Ok((ids, Corpus::new(items)))
}

fn check_finite(scores: &BTreeMap<String, f64>) -> Result<(), MetricError> {
    match scores.iter().find(|(_, v)| !v.is_finite()) {
        Some((k, v)) => Err(MetricError::InvalidParameter(format!("metric {k} evaluated to {v}"))),
        None => Ok(()),
    }
}

/// Validates and scores `sub` against `refs`.
pub fn score(sub: &Submission, refs: &ReferenceStore, config: &EngineConfig) -> Result<MetricReport, EngineError> {
    config.validate()?;
    let report = validate(sub, refs);
    if !report.is_ok() {
        return Err(EngineError::Validation(report));
    }
    if refs.is_empty() {
        return Err(MetricError::EmptyCorpus.into());
    }
    let (ids, corpus) = build_corpus(sub, refs)?;

    let mut scores = BTreeMap::new();
    let b = bleu(&corpus);
    for n in 1..=4 {
        scores.insert(format!("BLEU-{n}"), b.score(n));
    }

    let rouge_l = rouge_l_per_item(&corpus, config.rouge.beta)?;
    scores.insert("ROUGE-L".into(), mean(&rouge_l)?);

    let meteor_stats = meteor_per_item(&corpus, &config.meteor, &config.lexicon)?;
    let mut total = MeteorStats::default();
    for s in &meteor_stats {
        total += *s;
    }
    scores.insert("METEOR".into(), score_from_stats(&total, &config.meteor));

    let idf = build_idf(corpus.items().iter().map(|i| i.references()), config.cider.max_n)?;
    let cider_d = cider_per_item(&corpus, &idf, &config.cider, CiderVariant::D)?;
    scores.insert("CIDEr-D".into(), mean(&cider_d)?);

    for &n in &config.rouge_n {
        let per: Vec<f64> = corpus
            .items()
            .iter()
            .map(|i| rouge_n(i.candidate(), i.references(), n))
            .collect::<Result<_, _>>()?;
        scores.insert(format!("ROUGE-{n}"), mean(&per)?);
    }
    if config.rouge_s {
        let per: Vec<f64> = corpus
            .items()
            .iter()
            .map(|i| rouge_s(i.candidate(), i.references(), config.rouge.beta, config.rouge.max_gap))
            .collect::<Result<_, _>>()?;
        scores.insert("ROUGE-S".into(), mean(&per)?);
    }
    if config.cider_plain {
        scores.insert("CIDEr".into(), mean(&cider_per_item(&corpus, &idf, &config.cider, CiderVariant::Plain)?)?);
    }
    check_finite(&scores)?;

    let per_image = ids
        .iter()
        .enumerate()
        .map(|(i, &image_id)| ImageScores {
            image_id,
            rouge_l: rouge_l[i],
            meteor: score_from_stats(&meteor_stats[i], &config.meteor),
            cider_d: cider_d[i],
            meteor_stats: meteor_stats[i],
        })
        .collect();

    Ok(MetricReport {
        split: refs.split().to_string(),
        scores,
        per_image,
        provenance: Provenance {
            reference_hash: refs.content_hash(),
            num_images: refs.len(),
            params: config.clone(),
            lexicon_hash: config.lexicon_hash(),
        },
    })
}

/// Which caption of each image is held out as the human "prediction".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HeldOut {
    #[default]
    Last,
    Index(usize),
}

/// A reference set split into `k` references and one held-out caption per
/// image, in the two shapes the agreement pipeline needs.
#[derive(Debug, Clone)]
pub struct HumanSplit {
    pub references: ReferenceStore,
    pub held_out: Submission,
    pub agreement: AgreementDataset,
}

/// Holds out one caption per image and keeps the first `k` of the rest.
/// Every image needs at least `k + 1` captions.
pub fn human_split(refs: &ReferenceStore, k: usize, held_out: HeldOut) -> Result<HumanSplit, EngineError> {
    if k == 0 {
        return Err(MetricError::InvalidParameter("k must be at least 1".into()).into());
    }
    let mut references = ReferenceStore::new(refs.split());
    let mut entries = Vec::with_capacity(refs.len());
    let mut images = Vec::with_capacity(refs.len());
    for (image_id, captions) in refs.iter() {
        if captions.len() < k + 1 {
            return Err(DatasetError::Format(format!(
                "image {image_id} has {} captions, at least {} are needed",
                captions.len(),
                k + 1
            ))
            .into());
        }
        let h = match held_out {
            HeldOut::Last => captions.len() - 1,
            HeldOut::Index(i) if i < captions.len() => i,
            HeldOut::Index(i) => {
                return Err(DatasetError::Format(format!(
                    "image {image_id} has no caption at index {i}"
                ))
                .into())
            }
        };
        let rest: Vec<String> =
            captions.iter().enumerate().filter(|(i, _)| *i != h).map(|(_, c)| c.clone()).take(k).collect();
        images.push(AgreementImage {
            image_id,
            first_k: rest.iter().map(|c| tokenize(c)).collect::<Vec<TokenSeq>>(),
            held_out: tokenize(&captions[h]),
        });
        entries.push(SubmissionEntry { image_id, caption: captions[h].clone() });
        references.insert(image_id, rest);
    }
    Ok(HumanSplit { references, held_out: Submission::new(entries), agreement: AgreementDataset::new(k, images)? })
}
