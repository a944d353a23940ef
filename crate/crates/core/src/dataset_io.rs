//! Reference sets, candidate submissions and submission validation.
//!
//! Two reference formats are read:
//!
//! * `simple`: `[{"image_id": int, "captions": [str, ...]}, ...]`, where
//!   repeated image ids are merged;
//! * `coco_annotations`: the usual `{"images": [...], "annotations": [...]}`
//!   caption annotation layout.
//!
//! Submissions are a JSON array of `{"image_id": int, "caption": str}`
//! objects, either as a bare file or inside a zip archive.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Cursor, Read};
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::DatasetError;
use crate::textcore::{tokenize, TokenSeq};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ImageId(pub i64);

impl fmt::Display for ImageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceFormat {
    CocoAnnotations,
    Simple,
}

impl FromStr for ReferenceFormat {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "coco_annotations" | "coco" => Ok(Self::CocoAnnotations),
            "simple" => Ok(Self::Simple),
            other => Err(DatasetError::Format(format!("unknown reference format {other:?}"))),
        }
    }
}

#[derive(Debug, Default)]
struct ReferenceEntry {
    captions: Vec<String>,
    tokens: OnceLock<Vec<TokenSeq>>,
}

impl Clone for ReferenceEntry {
    fn clone(&self) -> Self {
        Self { captions: self.captions.clone(), tokens: OnceLock::new() }
    }
}

/// Reference captions for one split, keyed by image id.
///
/// Captions are tokenized on first access and cached.
#[derive(Debug, Clone, Default)]
pub struct ReferenceStore {
    split: String,
    images: BTreeMap<ImageId, ReferenceEntry>,
}

impl PartialEq for ReferenceStore {
    fn eq(&self, other: &Self) -> bool {
        self.split == other.split
            && self.images.len() == other.images.len()
            && self.images.iter().zip(&other.images).all(|((a, ea), (b, eb))| a == b && ea.captions == eb.captions)
    }
}

#[derive(Serialize, Deserialize)]
struct SimpleRecord {
    image_id: ImageId,
    captions: Vec<String>,
}

#[derive(Deserialize)]
struct CocoImage {
    id: ImageId,
}

#[derive(Deserialize)]
struct CocoAnnotation {
    image_id: ImageId,
    caption: String,
}

fn record_error(index: usize, err: impl fmt::Display) -> DatasetError {
    DatasetError::Record { index, message: err.to_string() }
}

fn parse_records<T: for<'de> Deserialize<'de>>(values: Vec<Value>) -> Result<Vec<T>, DatasetError> {
    values
        .into_iter()
        .enumerate()
        .map(|(i, v)| serde_json::from_value(v).map_err(|e| record_error(i, e)))
        .collect()
}

fn read_file(path: &Path) -> Result<Vec<u8>, DatasetError> {
    std::fs::read(path).map_err(|source| DatasetError::Io { path: path.display().to_string(), source })
}

impl ReferenceStore {
    pub fn new(split: impl Into<String>) -> Self {
        Self { split: split.into(), images: BTreeMap::new() }
    }

    /// Adds captions for an image, appending to any it already has.
    pub fn insert(&mut self, image_id: ImageId, captions: impl IntoIterator<Item = String>) {
        let entry = self.images.entry(image_id).or_default();
        entry.captions.extend(captions);
        entry.tokens = OnceLock::new();
    }

    pub fn split(&self) -> &str {
        &self.split
    }

    pub fn set_split(&mut self, split: impl Into<String>) {
        self.split = split.into();
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn contains(&self, image_id: ImageId) -> bool {
        self.images.contains_key(&image_id)
    }

    /// Image ids in ascending order.
    pub fn ids(&self) -> impl Iterator<Item = ImageId> + '_ {
        self.images.keys().copied()
    }

    pub fn captions(&self, image_id: ImageId) -> Option<&[String]> {
        self.images.get(&image_id).map(|e| e.captions.as_slice())
    }

    pub fn tokens(&self, image_id: ImageId) -> Option<&[TokenSeq]> {
        self.images
            .get(&image_id)
            .map(|e| e.tokens.get_or_init(|| e.captions.iter().map(|c| tokenize(c)).collect()).as_slice())
    }

    pub fn iter(&self) -> impl Iterator<Item = (ImageId, &[String])> {
        self.images.iter().map(|(id, e)| (*id, e.captions.as_slice()))
    }

    /// Every distinct token of every reference caption.
    pub fn vocabulary(&self) -> BTreeSet<String> {
        self.ids()
            .flat_map(|id| self.tokens(id).unwrap_or_default().iter())
            .flat_map(|s| s.tokens().iter().cloned())
            .collect()
    }

    fn check_nonempty(&self) -> Result<(), DatasetError> {
        match self.images.iter().find(|(_, e)| e.captions.is_empty()) {
            Some((id, _)) => Err(DatasetError::NoCaptions(id.0)),
            None => Ok(()),
        }
    }

    pub fn parse(bytes: &[u8], format: ReferenceFormat, split: impl Into<String>) -> Result<Self, DatasetError> {
        let mut store = Self::new(split);
        match format {
            ReferenceFormat::Simple => {
                let Value::Array(values) = serde_json::from_slice(bytes)? else {
                    return Err(DatasetError::NotAnArray);
                };
                for r in parse_records::<SimpleRecord>(values)? {
                    store.insert(r.image_id, r.captions);
                }
            }
            ReferenceFormat::CocoAnnotations => {
                let Value::Object(mut root) = serde_json::from_slice(bytes)? else {
                    return Err(DatasetError::Format("expected a JSON object with an \"annotations\" array".into()));
                };
                if let Some(images) = root.remove("images") {
                    let Value::Array(images) = images else {
                        return Err(DatasetError::Format("\"images\" must be an array".into()));
                    };
                    for img in parse_records::<CocoImage>(images)? {
                        store.images.entry(img.id).or_default();
                    }
                }
                let Some(Value::Array(annotations)) = root.remove("annotations") else {
                    return Err(DatasetError::Format("missing \"annotations\" array".into()));
                };
                for a in parse_records::<CocoAnnotation>(annotations)? {
                    store.insert(a.image_id, [a.caption]);
                }
            }
        }
        store.check_nonempty()?;
        Ok(store)
    }

    pub fn load(path: impl AsRef<Path>, format: ReferenceFormat, split: impl Into<String>) -> Result<Self, DatasetError> {
        Self::parse(&read_file(path.as_ref())?, format, split)
    }

    /// Serializes to the simple format, images in ascending id order.
    pub fn to_simple_json(&self) -> String {
        let records: Vec<SimpleRecord> = self
            .iter()
            .map(|(image_id, captions)| SimpleRecord { image_id, captions: captions.to_vec() })
            .collect();
        serde_json::to_string(&records).expect("records serialize")
    }

    /// SHA-256 of the simple serialization, hex encoded.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_simple_json().as_bytes()))
    }
}

/// Loads a reference set from `path`.
pub fn load_references(
    path: impl AsRef<Path>,
    format: ReferenceFormat,
    split: impl Into<String>,
) -> Result<ReferenceStore, DatasetError> {
    ReferenceStore::load(path, format, split)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmissionEntry {
    pub image_id: ImageId,
    pub caption: String,
}

/// Candidate captions in the order they were submitted.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Submission {
    entries: Vec<SubmissionEntry>,
}

impl Submission {
    pub fn new(entries: Vec<SubmissionEntry>) -> Self {
        Self { entries }
    }

    pub fn entries(&self) -> &[SubmissionEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.entries).expect("entries serialize")
    }
}

impl FromIterator<SubmissionEntry> for Submission {
    fn from_iter<T: IntoIterator<Item = SubmissionEntry>>(iter: T) -> Self {
        Self { entries: iter.into_iter().collect() }
    }
}

/// Parses a JSON submission, checking shape only.
pub fn parse_submission(bytes: &[u8]) -> Result<Submission, DatasetError> {
    let Value::Array(values) = serde_json::from_slice(bytes)? else {
        return Err(DatasetError::NotAnArray);
    };
    Ok(Submission { entries: parse_records(values)? })
}

pub fn load_submission(path: impl AsRef<Path>, split: &str) -> Result<Submission, DatasetError> {
    parse_submission_payload(&read_file(path.as_ref())?, split)
}

const ZIP_MAGIC: &[u8] = b"PK\x03\x04";

pub fn is_zip(bytes: &[u8]) -> bool {
    bytes.starts_with(ZIP_MAGIC)
}

/// Picks the submission file for `split` out of a zip archive: the only
/// `.json` file, or else the one whose file name contains the split name.
pub fn extract_from_zip(bytes: &[u8], split: &str) -> Result<Vec<u8>, DatasetError> {
    let zip_err = |e: zip::result::ZipError| DatasetError::Zip(e.to_string());
    let mut archive = zip::ZipArchive::new(Cursor::new(bytes)).map_err(zip_err)?;
    let names: Vec<String> = archive
        .file_names()
        .filter(|n| n.to_ascii_lowercase().ends_with(".json") && !n.ends_with('/'))
        .map(str::to_string)
        .collect();
    let chosen = match names.as_slice() {
        [] => return Err(DatasetError::Zip("archive contains no .json file".into())),
        [only] => only.clone(),
        _ => {
            let matching: Vec<&String> = names
                .iter()
                .filter(|n| n.rsplit('/').next().unwrap_or(n).contains(split))
                .collect();
            match matching.as_slice() {
                [one] => (*one).clone(),
                [] => return Err(DatasetError::Zip(format!("no .json file in the archive names split {split:?}"))),
                _ => return Err(DatasetError::Zip(format!("several .json files in the archive name split {split:?}"))),
            }
        }
    };
    let mut file = archive.by_name(&chosen).map_err(zip_err)?;
    let mut out = Vec::new();
    file.read_to_end(&mut out).map_err(|e| DatasetError::Zip(e.to_string()))?;
    Ok(out)
}

/// Parses either a bare JSON submission or a zip archive holding one.
pub fn parse_submission_payload(bytes: &[u8], split: &str) -> Result<Submission, DatasetError> {
    if is_zip(bytes) {
        parse_submission(&extract_from_zip(bytes, split)?)
    } else {
        parse_submission(bytes)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    MissingImage { image_id: ImageId },
    UnknownImage { image_id: ImageId },
    DuplicateImage { image_id: ImageId, count: usize },
    EmptyCaption { image_id: ImageId, entry: usize },
}

impl Violation {
    pub fn image_id(&self) -> ImageId {
        match self {
            Violation::MissingImage { image_id }
            | Violation::UnknownImage { image_id }
            | Violation::DuplicateImage { image_id, .. }
            | Violation::EmptyCaption { image_id, .. } => *image_id,
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::MissingImage { image_id } => write!(f, "missing image id {image_id}"),
            Violation::UnknownImage { image_id } => write!(f, "unknown image id {image_id}"),
            Violation::DuplicateImage { image_id, count } => {
                write!(f, "duplicate image id {image_id} ({count} captions)")
            }
            Violation::EmptyCaption { image_id, entry } => {
                write!(f, "empty caption for image id {image_id} (entry {entry})")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Checks that `sub` holds exactly one non-empty caption for every image of
/// `refs` and nothing else. Violations are sorted by image id.
pub fn validate(sub: &Submission, refs: &ReferenceStore) -> ValidationReport {
    let mut counts: BTreeMap<ImageId, usize> = BTreeMap::new();
    let mut violations = Vec::new();
    for (i, e) in sub.entries().iter().enumerate() {
        *counts.entry(e.image_id).or_insert(0) += 1;
        if e.caption.trim().is_empty() {
            violations.push(Violation::EmptyCaption { image_id: e.image_id, entry: i });
        }
    }
    for (&image_id, &count) in &counts {
        if !refs.contains(image_id) {
            violations.push(Violation::UnknownImage { image_id });
        }
        if count > 1 {
            violations.push(Violation::DuplicateImage { image_id, count });
        }
    }
    for image_id in refs.ids() {
        if !counts.contains_key(&image_id) {
            violations.push(Violation::MissingImage { image_id });
        }
    }
    violations.sort_by_key(|v| v.image_id());
    ValidationReport { violations }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    const TWO_IMAGES: &str = r#"[
        {"image_id": 1, "captions": ["a", "b", "c", "d", "e"]},
        {"image_id": 2, "captions": ["f", "g", "h", "i", "j"]}
    ]"#;

    fn store(json: &str) -> Result<ReferenceStore, DatasetError> {
        ReferenceStore::parse(json.as_bytes(), ReferenceFormat::Simple, "val")
    }

    fn entry(id: i64, caption: &str) -> SubmissionEntry {
        SubmissionEntry { image_id: ImageId(id), caption: caption.into() }
    }

    #[test]
    fn simple_format() {
        let s = store(TWO_IMAGES).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.captions(ImageId(2)).unwrap().len(), 5);
        assert_eq!(s.split(), "val");
    }

    #[test]
    fn duplicates_merge() {
        let s = store(r#"[{"image_id": 3, "captions": ["a dog"]}, {"image_id": 3, "captions": ["A cat."]}]"#).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.captions(ImageId(3)).unwrap(), ["a dog", "A cat."]);
        assert_eq!(s.tokens(ImageId(3)).unwrap()[1], TokenSeq::from_words(["a", "cat"]));
    }

    #[test]
    fn reference_errors() {
        match store(r#"[{"image_id": 1, "captions": ["a"]}, {"image_id": "2", "captions": ["b"]}]"#) {
            Err(DatasetError::Record { index: 1, .. }) => {}
            other => panic!("{other:?}"),
        }
        assert!(matches!(store(r#"[{"image_id": 4, "captions": []}]"#), Err(DatasetError::NoCaptions(4))));
        assert!(matches!(store(r#"{"image_id": 4}"#), Err(DatasetError::NotAnArray)));
        assert!(matches!(store("[{"), Err(DatasetError::Json(_))));
        assert!(matches!(
            ReferenceStore::load("/nonexistent/refs.json", ReferenceFormat::Simple, "val"),
            Err(DatasetError::Io { .. })
        ));
    }

    #[test]
    fn coco_format() {
        let json = r#"{
            "info": {},
            "images": [{"id": 10, "file_name": "x.jpg"}, {"id": 11}],
            "annotations": [
                {"id": 1, "image_id": 10, "caption": "A dog."},
                {"id": 2, "image_id": 11, "caption": "A cat."},
                {"id": 3, "image_id": 10, "caption": "Two dogs."}
            ]
        }"#;
        let s = ReferenceStore::parse(json.as_bytes(), ReferenceFormat::CocoAnnotations, "test").unwrap();
        assert_eq!(s.ids().collect::<Vec<_>>(), [ImageId(10), ImageId(11)]);
        assert_eq!(s.captions(ImageId(10)).unwrap(), ["A dog.", "Two dogs."]);

        let orphan = r#"{"images": [{"id": 1}, {"id": 2}], "annotations": [{"image_id": 1, "caption": "x"}]}"#;
        assert!(matches!(
            ReferenceStore::parse(orphan.as_bytes(), ReferenceFormat::CocoAnnotations, "test"),
            Err(DatasetError::NoCaptions(2))
        ));
        assert_eq!("coco_annotations".parse::<ReferenceFormat>().unwrap(), ReferenceFormat::CocoAnnotations);
        assert!("xml".parse::<ReferenceFormat>().is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = store(TWO_IMAGES).unwrap();
        let mut b = a.clone();
        assert_eq!(a.content_hash(), b.content_hash());
        b.insert(ImageId(2), ["k".to_string()]);
        assert_ne!(a.content_hash(), b.content_hash());
        assert_eq!(a.content_hash().len(), 64);
    }

    #[test]
    fn submission_parsing() {
        let s = parse_submission(br#"[{"image_id": 1, "caption": "a cat"}]"#).unwrap();
        assert_eq!(s.entries(), [entry(1, "a cat")]);
        assert!(parse_submission(b"[]").unwrap().is_empty());
        assert!(matches!(
            parse_submission(br#"[{"image_id": "1", "caption": "a cat"}]"#),
            Err(DatasetError::Record { index: 0, .. })
        ));
        assert!(matches!(parse_submission(br#"[{"image_id": 1.5, "caption": "x"}]"#), Err(DatasetError::Record { .. })));
        assert!(matches!(parse_submission(br#"[{"image_id": 1}]"#), Err(DatasetError::Record { .. })));
        assert!(matches!(parse_submission(br#"{"image_id": 1}"#), Err(DatasetError::NotAnArray)));
        assert!(matches!(parse_submission(br#"[{"image_id": 1, "caption": "a",}]"#), Err(DatasetError::Json(_))));
        let order = parse_submission(br#"[{"image_id": 2, "caption": "b"}, {"image_id": 1, "caption": "a"}]"#).unwrap();
        assert_eq!(order.entries()[0].image_id, ImageId(2));
    }

    fn zip_of(files: &[(&str, &str)]) -> Vec<u8> {
        let mut w = zip::ZipWriter::new(Cursor::new(Vec::new()));
        for (name, body) in files {
            w.start_file(*name, zip::write::SimpleFileOptions::default()).unwrap();
            w.write_all(body.as_bytes()).unwrap();
        }
        w.finish().unwrap().into_inner()
    }

    #[test]
    fn zip_payloads() {
        let val = r#"[{"image_id": 1, "caption": "val caption"}]"#;
        let test = r#"[{"image_id": 2, "caption": "test caption"}]"#;
        let single = zip_of(&[("results.json", val)]);
        assert_eq!(parse_submission_payload(&single, "test").unwrap().entries()[0].image_id, ImageId(1));
        let both = zip_of(&[("captions_val2014_results.json", val), ("captions_test2014_results.json", test)]);
        assert_eq!(parse_submission_payload(&both, "test").unwrap().entries()[0].image_id, ImageId(2));
        assert_eq!(parse_submission_payload(&both, "val").unwrap().entries()[0].image_id, ImageId(1));
        assert!(matches!(parse_submission_payload(&both, "train"), Err(DatasetError::Zip(_))));
        assert!(matches!(parse_submission_payload(&zip_of(&[("a.txt", "x")]), "val"), Err(DatasetError::Zip(_))));
        assert!(matches!(parse_submission_payload(b"PK\x03\x04garbage", "val"), Err(DatasetError::Zip(_))));
    }

    #[test]
    fn validation_cases() {
        let refs = store(TWO_IMAGES).unwrap();
        let ok = Submission::new(vec![entry(2, "x"), entry(1, "y")]);
        assert!(validate(&ok, &refs).is_ok());

        let missing = Submission::new(vec![entry(1, "y")]);
        assert_eq!(validate(&missing, &refs).violations, [Violation::MissingImage { image_id: ImageId(2) }]);

        let dup = Submission::new(vec![entry(1, "y"), entry(1, "z"), entry(2, "x")]);
        assert_eq!(validate(&dup, &refs).violations, [Violation::DuplicateImage { image_id: ImageId(1), count: 2 }]);

        let messy = Submission::new(vec![entry(1, "  "), entry(9, "q")]);
        assert_eq!(
            validate(&messy, &refs).violations,
            [
                Violation::EmptyCaption { image_id: ImageId(1), entry: 0 },
                Violation::MissingImage { image_id: ImageId(2) },
                Violation::UnknownImage { image_id: ImageId(9) },
            ]
        );
        assert_eq!(validate(&Submission::default(), &refs).violations.len(), 2);
    }

    #[test]
    fn violation_json_shape() {
        let v = serde_json::to_string(&Violation::MissingImage { image_id: ImageId(4) }).unwrap();
        assert_eq!(v, r#"{"kind":"missing_image","image_id":4}"#);
    }

    fn arb_store() -> impl Strategy<Value = ReferenceStore> {
        prop::collection::vec((0i64..20, prop::collection::vec("[a-z .,'\"-]{0,12}", 1..4)), 1..8).prop_map(|recs| {
            let mut s = ReferenceStore::new("val");
            for (id, caps) in recs {
                s.insert(ImageId(id), caps);
            }
            s
        })
    }

    proptest! {
        #[test]
        fn simple_round_trip(s in arb_store()) {
            let back = ReferenceStore::parse(s.to_simple_json().as_bytes(), ReferenceFormat::Simple, "val").unwrap();
            prop_assert_eq!(&back, &s);
            prop_assert_eq!(back.content_hash(), s.content_hash());
        }

        #[test]
        fn validation_iff_bijection(ids in prop::collection::vec(0i64..8, 0..10), ref_ids in prop::collection::btree_set(0i64..8, 1..6)) {
            let mut refs = ReferenceStore::new("val");
            for &id in &ref_ids {
                refs.insert(ImageId(id), ["r".to_string()]);
            }
            let sub: Submission = ids.iter().map(|&id| entry(id, "c")).collect();
            let unique: BTreeSet<i64> = ids.iter().copied().collect();
            let bijective = unique.len() == ids.len() && unique == ref_ids;
            prop_assert_eq!(validate(&sub, &refs).is_ok(), bijective);
        }
    }
}
