//! METEOR: staged 1:1 word alignment, fragmentation penalty and a
//! recall-weighted harmonic mean, aggregated over the corpus.
//!
//! Alignment stages run in a fixed priority order (exact, synonym, stem by
//! default). The aligner returns the alignment that lexicographically
//! maximises the number of matches made by each stage in order, and among
//! those the one with the fewest chunks. It is solved exactly with a memoised
//! search over candidate positions; states are keyed on the set of reference
//! positions still in play, so the search stays small for caption-length
//! input. Inputs whose search space exceeds [`SEARCH_STATE_LIMIT`] fall back
//! to a greedy adjacency-preferring aligner.

use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{DatasetError, MetricError};
use crate::stem::porter_stem;
use crate::textcore::TokenSeq;

/// Upper bound on memoised search states before the greedy fallback is used.
pub const SEARCH_STATE_LIMIT: usize = 2_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchStage {
    Exact,
    Synonym,
    Stem,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeteorParams {
    pub alpha: f64,
    pub gamma: f64,
    pub theta: f64,
    pub stages: Vec<MatchStage>,
}

impl Default for MeteorParams {
    fn default() -> Self {
        Self {
            alpha: 0.9,
            gamma: 0.5,
            theta: 3.0,
            stages: vec![MatchStage::Exact, MatchStage::Synonym, MatchStage::Stem],
        }
    }
}

impl MeteorParams {
    pub fn validate(&self) -> Result<(), MetricError> {
        let bad = |msg: String| Err(MetricError::InvalidParameter(msg));
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma must lie in [0, 1], got {}", self.gamma));
        }
        if !(self.theta.is_finite() && self.theta > 0.0) {
            return bad(format!("theta must be positive, got {}", self.theta));
        }
        if self.stages.is_empty() || self.stages.len() > 3 {
            return bad("between one and three matching stages are required".into());
        }
        for (i, s) in self.stages.iter().enumerate() {
            if self.stages[..i].contains(s) {
                return bad(format!("stage {s:?} listed twice"));
            }
        }
        Ok(())
    }
}

/// Word equivalence classes for the synonym stage.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SynonymLexicon {
    class_of: HashMap<String, usize>,
}

impl SynonymLexicon {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Builds a lexicon from word classes. Classes that share a word are
    /// merged so membership stays an equivalence relation.
    pub fn from_classes<I, C, S>(classes: I) -> Self
    where
        I: IntoIterator<Item = C>,
        C: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut class_of: HashMap<String, usize> = HashMap::new();
        let mut parent: Vec<usize> = Vec::new();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for class in classes {
            let id = parent.len();
            parent.push(id);
            for word in class {
                let word = word.into().to_lowercase();
                if word.is_empty() {
                    continue;
                }
                match class_of.get(&word) {
                    Some(&other) => {
                        let (a, b) = (find(&mut parent, other), find(&mut parent, id));
                        parent[a] = b;
                    }
                    None => {
                        class_of.insert(word, id);
                    }
                }
            }
        }
        for v in class_of.values_mut() {
            *v = find(&mut parent, *v);
        }
        Self { class_of }
    }

    /// Parses one class per line, words separated by whitespace or commas.
    /// Blank lines and lines starting with `#` are ignored.
    pub fn parse(text: &str) -> Self {
        Self::from_classes(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(|l| {
                    l.split(|c: char| c.is_whitespace() || c == ',')
                        .filter(|w| !w.is_empty())
                        .map(str::to_string)
                        .collect::<Vec<_>>()
                }),
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| DatasetError::Io { path: path.display().to_string(), source })?;
        Ok(Self::parse(&text))
    }

    pub fn len(&self) -> usize {
        self.class_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.class_of.is_empty()
    }

    /// Equivalence classes with their words sorted, in order of first word.
    pub fn classes(&self) -> Vec<Vec<String>> {
        let mut by_class: HashMap<usize, Vec<String>> = HashMap::new();
        for (w, c) in &self.class_of {
            by_class.entry(*c).or_default().push(w.clone());
        }
        let mut classes: Vec<Vec<String>> = by_class
            .into_values()
            .map(|mut v| {
                v.sort();
                v
            })
            .collect();
        classes.sort();
        classes
    }

    pub fn are_synonyms(&self, a: &str, b: &str) -> bool {
        match (self.class_of.get(a), self.class_of.get(b)) {
            (Some(x), Some(y)) => x == y,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordMatch {
    pub candidate: usize,
    pub reference: usize,
    pub stage: MatchStage,
}

/// A 1:1 alignment, matches sorted by candidate position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alignment {
    pub matches: Vec<WordMatch>,
    pub chunks: usize,
}

impl Alignment {
    pub fn matched(&self) -> usize {
        self.matches.len()
    }

    /// Matches made by each stage, in `stages` order.
    pub fn stage_counts(&self, stages: &[MatchStage]) -> Vec<usize> {
        stages
            .iter()
            .map(|s| self.matches.iter().filter(|m| m.stage == *s).count())
            .collect()
    }
}

/// Chunks in a set of `(candidate, reference)` pairs sorted by candidate
/// position: a chunk continues while both positions advance by one.
pub fn count_chunks(pairs: &[(usize, usize)]) -> usize {
    if pairs.is_empty() {
        return 0;
    }
    1 + pairs
        .windows(2)
        .filter(|w| !(w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1))
        .count()
}

/// Earliest stage (as an index into `stages`) at which two words match.
pub fn match_stage(
    candidate: &str,
    reference: &str,
    stages: &[MatchStage],
    lexicon: &SynonymLexicon,
    stems: Option<(&str, &str)>,
) -> Option<usize> {
    stages.iter().position(|stage| match stage {
        MatchStage::Exact => candidate == reference,
        MatchStage::Synonym => lexicon.are_synonyms(candidate, reference),
        MatchStage::Stem => match stems {
            Some((a, b)) => a == b,
            None => porter_stem(candidate) == porter_stem(reference),
        },
    })
}

/// Lexicographic objective: matches per stage in priority order, then fewer
/// chunks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default)]
struct Objective([i32; 4]);

impl Objective {
    fn add(mut self, other: Objective) -> Objective {
        for (a, b) in self.0.iter_mut().zip(other.0) {
            *a += b;
        }
        self
    }

    fn step(stage: usize, new_chunk: bool) -> Objective {
        let mut v = [0; 4];
        v[stage] = 1;
        v[3] = -(new_chunk as i32);
        Objective(v)
    }
}

struct Aligner<'a> {
    // allowed[i] = (reference position, stage index)
    allowed: Vec<Vec<(usize, usize)>>,
    // bit index of each relevant reference position
    bit_of: HashMap<usize, u32>,
    // relevant_from[i] = bits of reference positions some candidate >= i can use
    relevant_from: Vec<u128>,
    memo: HashMap<(usize, u128, usize), (Objective, Option<usize>)>,
    stages: &'a [MatchStage],
}

const NO_PREV: usize = usize::MAX;

impl Aligner<'_> {
    fn canonical_prev(&self, i: usize, prev: usize) -> usize {
        if prev == NO_PREV || i >= self.allowed.len() {
            return NO_PREV;
        }
        if self.allowed[i].iter().any(|&(j, _)| j == prev + 1) {
            prev
        } else {
            NO_PREV
        }
    }

    fn solve(&mut self, i: usize, used: u128, prev: usize) -> Option<Objective> {
        if i == self.allowed.len() {
            return Some(Objective::default());
        }
        let used = used & self.relevant_from[i];
        let prev = self.canonical_prev(i, prev);
        if let Some(&(obj, _)) = self.memo.get(&(i, used, prev)) {
            return Some(obj);
        }
        if self.memo.len() >= SEARCH_STATE_LIMIT {
            return None;
        }
        let mut best = self.solve(i + 1, used, NO_PREV)?;
        let mut choice = None;
        for k in 0..self.allowed[i].len() {
            let (j, stage) = self.allowed[i][k];
            let bit = 1u128 << self.bit_of[&j];
            if used & bit != 0 {
                continue;
            }
            let new_chunk = prev == NO_PREV || j != prev + 1;
            let rest = self.solve(i + 1, used | bit, j)?;
            let total = Objective::step(stage, new_chunk).add(rest);
            if total > best {
                best = total;
                choice = Some(j);
            }
        }
        self.memo.insert((i, used, prev), (best, choice));
        Some(best)
    }

    fn reconstruct(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        let mut used = 0u128;
        let mut prev = NO_PREV;
        for i in 0..self.allowed.len() {
            let key_used = used & self.relevant_from[i];
            let key_prev = self.canonical_prev(i, prev);
            let (_, choice) = self.memo[&(i, key_used, key_prev)];
            match choice {
                Some(j) => {
                    let stage = self.allowed[i].iter().find(|&&(r, _)| r == j).expect("allowed").1;
                    out.push((i, j, stage));
                    used |= 1u128 << self.bit_of[&j];
                    prev = j;
                }
                None => prev = NO_PREV,
            }
        }
        out
    }
}

fn allowed_pairs(
    candidate: &TokenSeq,
    reference: &TokenSeq,
    params: &MeteorParams,
    lexicon: &SynonymLexicon,
) -> Vec<Vec<(usize, usize)>> {
    let want_stems = params.stages.contains(&MatchStage::Stem);
    let stem_all = |s: &TokenSeq| -> Vec<String> {
        if want_stems {
            s.iter().map(porter_stem).collect()
        } else {
            Vec::new()
        }
    };
    let (cs, rs) = (stem_all(candidate), stem_all(reference));
    candidate
        .iter()
        .enumerate()
        .map(|(i, c)| {
            reference
                .iter()
                .enumerate()
                .filter_map(|(j, r)| {
                    let stems = want_stems.then(|| (cs[i].as_str(), rs[j].as_str()));
                    match_stage(c, r, &params.stages, lexicon, stems).map(|s| (j, s))
                })
                .collect()
        })
        .collect()
}

/// Greedy fallback: stage by stage, left to right, preferring the reference
/// position that extends the current chunk.
fn greedy_alignment(allowed: &[Vec<(usize, usize)>], stage_count: usize) -> Vec<(usize, usize, usize)> {
    let mut cand_used = vec![false; allowed.len()];
    let mut ref_used: HashMap<usize, bool> = HashMap::new();
    let mut chosen: Vec<Option<(usize, usize)>> = vec![None; allowed.len()];
    for stage in 0..stage_count {
        for i in 0..allowed.len() {
            if cand_used[i] {
                continue;
            }
            let prev = i.checked_sub(1).and_then(|p| chosen[p]).map(|(j, _)| j);
            let options: Vec<usize> = allowed[i]
                .iter()
                .filter(|&&(j, s)| s == stage && !ref_used.get(&j).copied().unwrap_or(false))
                .map(|&(j, _)| j)
                .collect();
            let pick = options
                .iter()
                .copied()
                .find(|&j| Some(j) == prev.map(|p| p + 1))
                .or_else(|| options.first().copied());
            if let Some(j) = pick {
                cand_used[i] = true;
                ref_used.insert(j, true);
                chosen[i] = Some((j, stage));
            }
        }
    }
    chosen
        .into_iter()
        .enumerate()
        .filter_map(|(i, c)| c.map(|(j, s)| (i, j, s)))
        .collect()
}

pub fn align(
    candidate: &TokenSeq,
    reference: &TokenSeq,
    params: &MeteorParams,
    lexicon: &SynonymLexicon,
) -> Alignment {
    let allowed = allowed_pairs(candidate, reference, params, lexicon);

    let mut relevant: Vec<usize> = allowed.iter().flatten().map(|&(j, _)| j).collect();
    relevant.sort_unstable();
    relevant.dedup();

    let triples = if relevant.len() <= 128 {
        let bit_of: HashMap<usize, u32> =
            relevant.iter().enumerate().map(|(b, &j)| (j, b as u32)).collect();
        let mut relevant_from = vec![0u128; allowed.len() + 1];
        for i in (0..allowed.len()).rev() {
            relevant_from[i] = relevant_from[i + 1]
                | allowed[i].iter().fold(0u128, |acc, (j, _)| acc | 1u128 << bit_of[j]);
        }
        let mut aligner = Aligner {
            allowed: allowed.clone(),
            bit_of,
            relevant_from,
            memo: HashMap::new(),
            stages: &params.stages,
        };
        match aligner.solve(0, 0, NO_PREV) {
            Some(_) => aligner.reconstruct(),
            None => greedy_alignment(&allowed, aligner.stages.len()),
        }
    } else {
        greedy_alignment(&allowed, params.stages.len())
    };

    let pairs: Vec<(usize, usize)> = triples.iter().map(|&(i, j, _)| (i, j)).collect();
    Alignment {
        chunks: count_chunks(&pairs),
        matches: triples
            .into_iter()
            .map(|(i, j, s)| WordMatch { candidate: i, reference: j, stage: params.stages[s] })
            .collect(),
    }
}

/// Additive alignment statistics; corpus statistics are their sum.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeteorStats {
    pub matches: usize,
    pub candidate_len: usize,
    pub reference_len: usize,
    pub chunks: usize,
}

impl std::ops::AddAssign for MeteorStats {
    fn add_assign(&mut self, rhs: Self) {
        self.matches += rhs.matches;
        self.candidate_len += rhs.candidate_len;
        self.reference_len += rhs.reference_len;
        self.chunks += rhs.chunks;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeteorBreakdown {
    pub precision: f64,
    pub recall: f64,
    pub f_mean: f64,
    pub penalty: f64,
    pub score: f64,
}

pub fn breakdown(stats: &MeteorStats, params: &MeteorParams) -> MeteorBreakdown {
    if stats.matches == 0 {
        return MeteorBreakdown { precision: 0.0, recall: 0.0, f_mean: 0.0, penalty: 0.0, score: 0.0 };
    }
    let m = stats.matches as f64;
    let precision = m / stats.candidate_len as f64;
    let recall = m / stats.reference_len as f64;
    let f_mean = precision * recall / (params.alpha * precision + (1.0 - params.alpha) * recall);
    let penalty = params.gamma * (stats.chunks as f64 / m).powf(params.theta);
    MeteorBreakdown { precision, recall, f_mean, penalty, score: (1.0 - penalty) * f_mean }
}

pub fn score_from_stats(stats: &MeteorStats, params: &MeteorParams) -> f64 {
    breakdown(stats, params).score
}

pub fn sentence_stats(
    candidate: &TokenSeq,
    reference: &TokenSeq,
    params: &MeteorParams,
    lexicon: &SynonymLexicon,
) -> MeteorStats {
    let a = align(candidate, reference, params, lexicon);
    MeteorStats {
        matches: a.matched(),
        candidate_len: candidate.len(),
        reference_len: reference.len(),
        chunks: a.chunks,
    }
}

/// Statistics against the best-scoring reference (first one on ties).
pub fn best_reference_stats(
    candidate: &TokenSeq,
    refs: &[TokenSeq],
    params: &MeteorParams,
    lexicon: &SynonymLexicon,
) -> Result<MeteorStats, MetricError> {
    let mut best: Option<(f64, MeteorStats)> = None;
    for r in refs {
        let stats = sentence_stats(candidate, r, params, lexicon);
        let s = score_from_stats(&stats, params);
        if best.is_none_or(|(b, _)| s > b) {
            best = Some((s, stats));
        }
    }
    best.map(|(_, s)| s).ok_or(MetricError::NoReferences)
}

pub fn meteor_per_item(
    corpus: &Corpus,
    params: &MeteorParams,
    lexicon: &SynonymLexicon,
) -> Result<Vec<MeteorStats>, MetricError> {
    params.validate()?;
    corpus
        .items()
        .par_iter()
        .map(|item| best_reference_stats(item.candidate(), item.references(), params, lexicon))
        .collect()
}

pub fn meteor_corpus(
    corpus: &Corpus,
    params: &MeteorParams,
    lexicon: &SynonymLexicon,
) -> Result<f64, MetricError> {
    if corpus.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    let mut total = MeteorStats::default();
    for s in meteor_per_item(corpus, params, lexicon)? {
        total += s;
    }
    Ok(score_from_stats(&total, params))
}
