use crate::error::MetricError;
use crate::textcore::TokenSeq;

/// One candidate caption together with the references for its image.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusItem {
    candidate: TokenSeq,
    references: Vec<TokenSeq>,
}

impl CorpusItem {
    pub fn new(candidate: TokenSeq, references: Vec<TokenSeq>) -> Result<Self, MetricError> {
        if references.is_empty() {
            return Err(MetricError::NoReferences);
        }
        Ok(Self { candidate, references })
    }

    pub fn candidate(&self) -> &TokenSeq {
        &self.candidate
    }

    pub fn references(&self) -> &[TokenSeq] {
        &self.references
    }
}

/// Candidates paired with their references; every item has at least one
/// reference.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    items: Vec<CorpusItem>,
}

impl Corpus {
    pub fn new(items: Vec<CorpusItem>) -> Self {
        Self { items }
    }

    pub fn items(&self) -> &[CorpusItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, item: CorpusItem) {
        self.items.push(item);
    }
}

impl FromIterator<CorpusItem> for Corpus {
    fn from_iter<T: IntoIterator<Item = CorpusItem>>(iter: T) -> Self {
        Corpus { items: iter.into_iter().collect() }
    }
}
