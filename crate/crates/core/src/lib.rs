//! Caption evaluation toolkit.
//!
//! The crate is organised bottom-up:
//!
//! * [`textcore`] tokenizes captions and provides the n-gram, skip-bigram and
//!   LCS primitives every metric is built on.
//! * [`bleu`], [`rouge`], [`meteor`] and [`cider`] implement the metrics over
//!   a [`Corpus`] of tokenized candidates and references.
//! * [`agreement`] implements the word-level human agreement analysis and its
//!   generative model.
//! * [`dataset_io`] loads reference sets and candidate submissions.
//! * [`engine`] ties everything together into a [`MetricReport`].

pub mod agreement;
pub mod bleu;
pub mod cider;
pub mod corpus;
pub mod dataset_io;
pub mod engine;
pub mod error;
pub mod meteor;
pub mod rouge;
pub mod stem;
pub mod textcore;

pub use corpus::{Corpus, CorpusItem};
pub use dataset_io::{ImageId, ReferenceStore, Submission, SubmissionEntry, ValidationReport, Violation};
pub use engine::{score, EngineConfig, MetricReport};
pub use error::{DatasetError, EngineError, MetricError};
pub use textcore::{tokenize, NGram, NGramCounts, SkipBigramCounts, TokenSeq};
