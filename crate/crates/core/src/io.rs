//! Line-delimited JSON formats for datasets, knowledge bases,
//! augmentations and predictions.
//!
//! Every format is UTF-8 with one record per line. Known fields are written
//! in a fixed order followed by any unknown fields (sorted by name), so a
//! canonical file survives a load/save cycle byte for byte.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::GenerationParams;
use crate::linker::{Candidate, RankedPrediction};
use crate::model::{
    Dataset, Entity, Extra, KbError, KnowledgeBase, MentionContext, MentionKey, ViolationKind,
};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record ({detail}): {content}")]
    MalformedLine {
        line: usize,
        content: String,
        detail: String,
    },
    #[error("line {line}: span does not match surface in document {doc_id:?}: {detail}")]
    SpanMismatch {
        line: usize,
        doc_id: String,
        detail: String,
    },
    #[error("line {line}: duplicate mention {key}")]
    DuplicateMention { line: usize, key: MentionKey },
    #[error("duplicate entity id {0:?}")]
    DuplicateEntityId(String),
    #[error(transparent)]
    Kb(KbError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Yields `(line_no, value)` for each non-blank line; line numbers are 1-based.
fn read_lines<T: DeserializeOwned>(reader: impl BufRead) -> Result<Vec<(usize, T)>, IoError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| IoError::MalformedLine {
            line: line_no,
            content: String::new(),
            detail: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| IoError::MalformedLine {
            line: line_no,
            content: line.clone(),
            detail: e.to_string(),
        })?;
        out.push((line_no, value));
    }
    Ok(out)
}

fn write_lines<T: Serialize>(
    mut writer: impl Write,
    items: impl IntoIterator<Item = T>,
) -> std::io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut writer, &item)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

fn open(path: &Path) -> Result<BufReader<File>, IoError> {
    File::open(path).map(BufReader::new).map_err(io_err(path))
}

fn create(path: &Path) -> Result<BufWriter<File>, IoError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

fn stem(path: &Path) -> String {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    name.split('.').next().unwrap_or_default().to_string()
}

// ---------------------------------------------------------------- datasets

pub fn read_dataset(reader: impl BufRead, name: &str) -> Result<Dataset, IoError> {
    let mut seen = std::collections::HashSet::new();
    let mut records = Vec::new();
    for (line, record) in read_lines::<MentionContext>(reader)? {
        match record.check() {
            Some(ViolationKind::EmptySurface) => {
                return Err(IoError::MalformedLine {
                    line,
                    content: serde_json::to_string(&record).unwrap_or_default(),
                    detail: "empty surface".into(),
                })
            }
            Some(kind) => {
                return Err(IoError::SpanMismatch {
                    line,
                    doc_id: record.doc_id,
                    detail: kind.to_string(),
                })
            }
            None => {}
        }
        if !seen.insert(record.source_key()) {
            return Err(IoError::DuplicateMention {
                line,
                key: record.source_key(),
            });
        }
        records.push(record);
    }
    Ok(Dataset::new(name, records))
}

/// Loads a normalized dataset file. The dataset is named after the file
/// stem.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset, IoError> {
    let path = path.as_ref();
    read_dataset(open(path)?, &stem(path))
}

pub fn write_dataset(writer: impl Write, dataset: &Dataset) -> std::io::Result<()> {
    write_lines(writer, &dataset.records)
}

pub fn save_dataset(path: impl AsRef<Path>, dataset: &Dataset) -> Result<(), IoError> {
    let path = path.as_ref();
    write_dataset(create(path)?, dataset).map_err(io_err(path))
}

// ---------------------------------------------------------- knowledge base

pub fn read_kb(reader: impl BufRead) -> Result<KnowledgeBase, IoError> {
    let entities: Vec<Entity> = read_lines::<Entity>(reader)?
        .into_iter()
        .map(|(_, e)| e)
        .collect();
    KnowledgeBase::from_entities(entities).map_err(|e| match e {
        KbError::DuplicateEntityId(id) => IoError::DuplicateEntityId(id),
        other => IoError::Kb(other),
    })
}

pub fn load_kb(path: impl AsRef<Path>) -> Result<KnowledgeBase, IoError> {
    read_kb(open(path.as_ref())?)
}

pub fn save_kb(path: impl AsRef<Path>, kb: &KnowledgeBase) -> Result<(), IoError> {
    let path = path.as_ref();
    write_lines(create(path)?, kb.entities()).map_err(io_err(path))
}

// ----------------------------------------------------------- augmentations

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationRecord {
    pub doc_id: String,
    pub start: usize,
    pub length: usize,
    pub provider: String,
    pub description: String,
    #[serde(flatten)]
    pub extra: Extra,
}

impl AugmentationRecord {
    pub fn new(
        mc: &MentionContext,
        provider: impl Into<String>,
        description: impl Into<String>,
    ) -> Self {
        AugmentationRecord {
            doc_id: mc.doc_id.clone(),
            start: mc.start,
            length: mc.length,
            provider: provider.into(),
            description: description.into(),
            extra: Extra::new(),
        }
    }

    pub fn key(&self) -> MentionKey {
        MentionKey::new(self.doc_id.clone(), self.start, self.length)
    }
}

/// Generated descriptions keyed by mention, in insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentationSet {
    pub provider: String,
    /// Not persisted in the record format; loaded sets carry the defaults.
    pub params: GenerationParams,
    pub records: IndexMap<MentionKey, AugmentationRecord>,
}

impl AugmentationSet {
    pub fn new(provider: impl Into<String>, params: GenerationParams) -> Self {
        AugmentationSet {
            provider: provider.into(),
            params,
            records: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, record: AugmentationRecord) -> Option<AugmentationRecord> {
        self.records.insert(record.key(), record)
    }

    pub fn get(&self, key: &MentionKey) -> Option<&AugmentationRecord> {
        self.records.get(key)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

pub fn read_augmentations(reader: impl BufRead) -> Result<AugmentationSet, IoError> {
    let mut set = AugmentationSet::new("", GenerationParams::default());
    for (line, record) in read_lines::<AugmentationRecord>(reader)? {
        if record.description.is_empty() {
            return Err(IoError::MalformedLine {
                line,
                content: serde_json::to_string(&record).unwrap_or_default(),
                detail: "empty description".into(),
            });
        }
        if set.provider.is_empty() {
            set.provider = record.provider.clone();
        }
        if set.records.contains_key(&record.key()) {
            return Err(IoError::DuplicateMention {
                line,
                key: record.key(),
            });
        }
        set.insert(record);
    }
    Ok(set)
}

pub fn load_augmentations(path: impl AsRef<Path>) -> Result<AugmentationSet, IoError> {
    read_augmentations(open(path.as_ref())?)
}

pub fn write_augmentations(writer: impl Write, set: &AugmentationSet) -> std::io::Result<()> {
    write_lines(writer, set.records.values())
}

pub fn save_augmentations(path: impl AsRef<Path>, set: &AugmentationSet) -> Result<(), IoError> {
    let path = path.as_ref();
    write_augmentations(create(path)?, set).map_err(io_err(path))
}

// ------------------------------------------------------------- predictions

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PredictionRecord {
    doc_id: String,
    start: usize,
    length: usize,
    system: String,
    candidates: Vec<Candidate>,
    #[serde(flatten)]
    extra: Extra,
}

/// One system's predictions keyed by mention, in insertion order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PredictionSet {
    pub system: String,
    pub records: IndexMap<MentionKey, RankedPrediction>,
    /// Unknown per-record fields, kept for round trips.
    pub extras: IndexMap<MentionKey, Extra>,
}

impl PredictionSet {
    pub fn new(system: impl Into<String>) -> Self {
        PredictionSet {
            system: system.into(),
            ..Default::default()
        }
    }

    pub fn insert(&mut self, key: MentionKey, prediction: RankedPrediction) {
        self.records.insert(key, prediction);
    }

    pub fn get(&self, key: &MentionKey) -> Option<&RankedPrediction> {
        self.records.get(key)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

pub fn read_predictions(reader: impl BufRead) -> Result<PredictionSet, IoError> {
    let mut set = PredictionSet::default();
    for (line, record) in read_lines::<PredictionRecord>(reader)? {
        let key = MentionKey::new(record.doc_id.clone(), record.start, record.length);
        let prediction =
            RankedPrediction::new(record.candidates).map_err(|e| IoError::MalformedLine {
                line,
                content: key.to_string(),
                detail: e.to_string(),
            })?;
        if set.system.is_empty() {
            set.system = record.system;
        }
        if set.records.contains_key(&key) {
            return Err(IoError::DuplicateMention { line, key });
        }
        if !record.extra.is_empty() {
            set.extras.insert(key.clone(), record.extra);
        }
        set.records.insert(key, prediction);
    }
    Ok(set)
}

pub fn load_predictions(path: impl AsRef<Path>) -> Result<PredictionSet, IoError> {
    read_predictions(open(path.as_ref())?)
}

pub fn write_predictions(writer: impl Write, set: &PredictionSet) -> std::io::Result<()> {
    let records = set
        .records
        .iter()
        .map(|(key, prediction)| PredictionRecord {
            doc_id: key.doc_id.clone(),
            start: key.start,
            length: key.length,
            system: set.system.clone(),
            candidates: prediction.candidates().to_vec(),
            extra: set.extras.get(key).cloned().unwrap_or_default(),
        });
    write_lines(writer, records)
}

pub fn save_predictions(path: impl AsRef<Path>, set: &PredictionSet) -> Result<(), IoError> {
    let path = path.as_ref();
    write_predictions(create(path)?, set).map_err(io_err(path))
}

// --------------------------------------------------------------- alignment

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AlignmentReport {
    pub matched: usize,
    /// Dataset mentions without an augmentation, in dataset order.
    pub missing: Vec<MentionKey>,
    /// Augmentations that match no mention, in file order.
    pub orphans: Vec<MentionKey>,
}

impl AlignmentReport {
    pub fn is_complete(&self) -> bool {
        self.missing.is_empty()
    }
}

/// Matches augmentations to dataset mentions by `(doc_id, start, length)`.
pub fn align(dataset: &Dataset, aug: &AugmentationSet) -> AlignmentReport {
    let keys: std::collections::HashSet<MentionKey> =
        dataset.records.iter().map(MentionContext::key).collect();
    let mut report = AlignmentReport::default();
    for record in &dataset.records {
        let key = record.key();
        if aug.records.contains_key(&key) {
            report.matched += 1;
        } else {
            report.missing.push(key);
        }
    }
    report.orphans = aug
        .records
        .keys()
        .filter(|k| !keys.contains(*k))
        .cloned()
        .collect();
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO: &str = concat!(
        r#"{"doc_id":"d1","context":"He visited Paris.","start":11,"length":5,"surface":"Paris","gold_entity_id":"Q90"}"#,
        "\n",
        r#"{"doc_id":"d2","context":"Jordan scored.","start":0,"length":6,"surface":"Jordan","gold_entity_id":"Q41421","note":"x"}"#,
        "\n"
    );

    #[test]
    fn dataset_preserves_order_and_unknown_fields() {
        let d = read_dataset(TWO.as_bytes(), "toy").unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.records[0].doc_id, "d1");
        assert_eq!(d.records[1].extra["note"], "x");
        let mut out = Vec::new();
        write_dataset(&mut out, &d).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), TWO);
    }

    #[test]
    fn missing_field_is_malformed() {
        let bad = concat!(
            r#"{"doc_id":"d1","context":"He visited Paris.","start":11,"length":5,"surface":"Paris","gold_entity_id":"Q90"}"#,
            "\n",
            r#"{"doc_id":"d2","context":"He visited Paris.","start":11,"length":5,"surface":"Paris"}"#,
            "\n"
        );
        match read_dataset(bad.as_bytes(), "x") {
            Err(IoError::MalformedLine { line, content, .. }) => {
                assert_eq!(line, 2);
                assert!(content.contains("\"d2\""));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn span_mismatch_is_reported_with_doc_id() {
        let bad = r#"{"doc_id":"d9","context":"He visited Paris.","start":11,"length":5,"surface":"Parris","gold_entity_id":"Q90"}"#;
        assert!(matches!(
            read_dataset(bad.as_bytes(), "x"),
            Err(IoError::SpanMismatch { line: 1, ref doc_id, .. }) if doc_id == "d9"
        ));
    }

    #[test]
    fn kb_loading() {
        let kb_text = concat!(
            r#"{"id":"Paris_Texas","title":"Paris, Texas","aliases":["Paris"],"description":"city in Texas","url":null,"pagerank":0.00001}"#,
            "\n",
            r#"{"id":"Paris_France","title":"Paris, France","aliases":["Paris"],"description":"capital of France","url":"https://en.wikipedia.org/wiki/Paris","pagerank":0.001}"#,
            "\n",
            r#"{"id":"Q5","title":"Lonely","aliases":[],"description":"","url":null,"pagerank":null}"#,
            "\n"
        );
        let kb = read_kb(kb_text.as_bytes()).unwrap();
        assert_eq!(kb.lookup_alias("paris"), ["Paris_France", "Paris_Texas"]);
        assert_eq!(kb.lookup_alias("lonely"), ["Q5"]);
        assert_eq!(
            kb.lookup_url("https://en.wikipedia.org/wiki/Paris"),
            Some("Paris_France")
        );

        let dup = concat!(
            r#"{"id":"Q90","title":"a"}"#,
            "\n",
            r#"{"id":"Q90","title":"b"}"#,
            "\n"
        );
        assert!(
            matches!(read_kb(dup.as_bytes()), Err(IoError::DuplicateEntityId(id)) if id == "Q90")
        );
        assert!(matches!(
            read_kb("{\"id\":\"Q1\"}\n".as_bytes()),
            Err(IoError::MalformedLine { line: 1, .. })
        ));
    }

    fn mentions(n: usize) -> Dataset {
        let records = (0..n)
            .map(|i| {
                MentionContext::locate(format!("d{i}"), "Paris is big.", "Paris", "Q90").unwrap()
            })
            .collect();
        Dataset::new("t", records)
    }

    fn aug_of(keys: &[&str]) -> AugmentationSet {
        let mut set = AugmentationSet::new("mock/echo", GenerationParams::default());
        for doc in keys {
            let mc = MentionContext::locate(*doc, "Paris is big.", "Paris", "Q90").unwrap();
            set.insert(AugmentationRecord::new(
                &mc,
                "mock/echo",
                "Paris is a city.",
            ));
        }
        set
    }

    #[test]
    fn alignment_counts() {
        let d = mentions(3);
        let full = align(&d, &aug_of(&["d0", "d1", "d2"]));
        assert_eq!(
            (full.matched, full.missing.len(), full.orphans.len()),
            (3, 0, 0)
        );
        let partial = align(&d, &aug_of(&["d0", "d2"]));
        assert_eq!((partial.matched, partial.missing.len()), (2, 1));
        assert_eq!(partial.missing[0], MentionKey::new("d1", 0, 5));
        let extra = align(&d, &aug_of(&["d0", "d1", "d2", "d7"]));
        assert_eq!((extra.matched, extra.orphans.len()), (3, 1));
    }

    #[test]
    fn augmentation_round_trip() {
        let set = aug_of(&["d0", "d1"]);
        let mut out = Vec::new();
        write_augmentations(&mut out, &set).unwrap();
        let back = read_augmentations(out.as_slice()).unwrap();
        assert_eq!(back.records, set.records);
        assert_eq!(back.provider, "mock/echo");
        assert!(read_augmentations(
            r#"{"doc_id":"a","start":0,"length":1,"provider":"p","description":""}"#.as_bytes()
        )
        .is_err());
    }

    #[test]
    fn prediction_round_trip_and_validation() {
        let mut set = PredictionSet::new("baseline");
        set.insert(
            MentionKey::new("d1", 0, 5),
            RankedPrediction::new(vec![Candidate::new("A", 0.7), Candidate::new("B", 0.3)])
                .unwrap(),
        );
        set.insert(
            MentionKey::new("d2", 3, 2),
            RankedPrediction::no_prediction(),
        );
        let mut out = Vec::new();
        write_predictions(&mut out, &set).unwrap();
        let text = String::from_utf8(out).unwrap();
        let back = read_predictions(text.as_bytes()).unwrap();
        assert_eq!(back, set);

        let unsorted = r#"{"doc_id":"d","start":0,"length":1,"system":"s","candidates":[{"entity_id":"A","prob":0.2},{"entity_id":"B","prob":0.8}]}"#;
        assert!(matches!(
            read_predictions(unsorted.as_bytes()),
            Err(IoError::MalformedLine { .. })
        ));
    }
}
