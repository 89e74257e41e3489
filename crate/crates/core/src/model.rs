//! Domain types shared by every stage: entities, mentions, datasets and the
//! knowledge base with its alias index.
//!
//! All offsets are counted in Unicode scalar values (`char`s), never bytes.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Gold id used for mentions that have no entity in the knowledge base.
pub const NIL_ENTITY_ID: &str = "@@NIL@@";

/// Extra fields recording the original span of a derived record.
pub const SOURCE_START: &str = "source_start";
pub const SOURCE_LENGTH: &str = "source_length";

/// Fields we do not model but must carry through a load/save cycle.
pub type Extra = BTreeMap<String, serde_json::Value>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub id: String,
    pub title: String,
    #[serde(default)]
    pub aliases: Vec<String>,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub url: Option<String>,
    #[serde(default)]
    pub pagerank: Option<f64>,
    #[serde(flatten)]
    pub extra: Extra,
}

impl Entity {
    pub fn new(id: impl Into<String>, title: impl Into<String>) -> Self {
        Entity {
            id: id.into(),
            title: title.into(),
            aliases: Vec::new(),
            description: String::new(),
            url: None,
            pagerank: None,
            extra: Extra::new(),
        }
    }

    pub fn with_aliases<I, S>(mut self, aliases: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.aliases = aliases.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_description(mut self, description: impl Into<String>) -> Self {
        self.description = description.into();
        self
    }

    pub fn with_url(mut self, url: impl Into<String>) -> Self {
        self.url = Some(url.into());
        self
    }

    pub fn with_pagerank(mut self, pagerank: f64) -> Self {
        self.pagerank = Some(pagerank);
        self
    }
}

/// One mention inside one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MentionContext {
    pub doc_id: String,
    pub context: String,
    pub start: usize,
    pub length: usize,
    pub surface: String,
    pub gold_entity_id: String,
    #[serde(flatten)]
    pub extra: Extra,
}

impl MentionContext {
    pub fn new(
        doc_id: impl Into<String>,
        context: impl Into<String>,
        start: usize,
        length: usize,
        surface: impl Into<String>,
        gold_entity_id: impl Into<String>,
    ) -> Self {
        MentionContext {
            doc_id: doc_id.into(),
            context: context.into(),
            start,
            length,
            surface: surface.into(),
            gold_entity_id: gold_entity_id.into(),
            extra: Extra::new(),
        }
    }

    /// Builds a mention at the first occurrence of `surface` in `context`.
    pub fn locate(
        doc_id: impl Into<String>,
        context: impl Into<String>,
        surface: impl Into<String>,
        gold_entity_id: impl Into<String>,
    ) -> Option<Self> {
        let context = context.into();
        let surface = surface.into();
        let byte_pos = context.find(&surface)?;
        let start = context[..byte_pos].chars().count();
        let length = surface.chars().count();
        Some(Self::new(
            doc_id,
            context,
            start,
            length,
            surface,
            gold_entity_id,
        ))
    }

    pub fn key(&self) -> MentionKey {
        MentionKey::new(self.doc_id.clone(), self.start, self.length)
    }

    /// Key of the mention this record was derived from. Fused records keep
    /// the original span in `source_start`/`source_length`; for any other
    /// record this is [`MentionContext::key`].
    pub fn source_key(&self) -> MentionKey {
        let field = |name: &str| {
            self.extra
                .get(name)
                .and_then(serde_json::Value::as_u64)
                .and_then(|v| usize::try_from(v).ok())
        };
        match (field(SOURCE_START), field(SOURCE_LENGTH)) {
            (Some(start), Some(length)) => MentionKey::new(self.doc_id.clone(), start, length),
            _ => self.key(),
        }
    }

    pub fn is_nil(&self) -> bool {
        self.gold_entity_id == NIL_ENTITY_ID
    }

    pub fn context_chars(&self) -> usize {
        self.context.chars().count()
    }

    /// The slice of the context covered by the span, if it is in bounds.
    pub fn span_text(&self) -> Option<&str> {
        char_slice(&self.context, self.start, self.length)
    }

    pub fn check(&self) -> Option<ViolationKind> {
        if self.surface.is_empty() {
            return Some(ViolationKind::EmptySurface);
        }
        let context_len = self.context_chars();
        match self.span_text() {
            None => Some(ViolationKind::SpanOutOfBounds {
                start: self.start,
                length: self.length,
                context_len,
            }),
            Some(found) if found != self.surface => Some(ViolationKind::SpanMismatch {
                expected: self.surface.clone(),
                found: found.to_string(),
            }),
            Some(_) => None,
        }
    }
}

/// Identity of a mention: document plus character span.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MentionKey {
    pub doc_id: String,
    pub start: usize,
    pub length: usize,
}

impl MentionKey {
    pub fn new(doc_id: impl Into<String>, start: usize, length: usize) -> Self {
        MentionKey {
            doc_id: doc_id.into(),
            start,
            length,
        }
    }
}

impl fmt::Display for MentionKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}+{}", self.doc_id, self.start, self.length)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub name: String,
    pub records: Vec<MentionContext>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, records: Vec<MentionContext>) -> Self {
        Dataset {
            name: name.into(),
            records,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ViolationKind {
    EmptySurface,
    SpanOutOfBounds {
        start: usize,
        length: usize,
        context_len: usize,
    },
    SpanMismatch {
        expected: String,
        found: String,
    },
    DuplicateKey,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ViolationKind::EmptySurface => write!(f, "empty surface"),
            ViolationKind::SpanOutOfBounds {
                start,
                length,
                context_len,
            } => write!(
                f,
                "span {start}+{length} out of bounds for context of {context_len} chars"
            ),
            ViolationKind::SpanMismatch { expected, found } => {
                write!(
                    f,
                    "span/surface mismatch: expected {expected:?}, found {found:?}"
                )
            }
            ViolationKind::DuplicateKey => write!(f, "duplicate (doc_id, start, length)"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub index: usize,
    pub doc_id: String,
    pub kind: ViolationKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Lists every record that breaks a mention invariant. Pure.
pub fn validate_dataset(dataset: &Dataset) -> ValidationReport {
    let mut seen = HashSet::new();
    let mut violations = Vec::new();
    for (index, record) in dataset.records.iter().enumerate() {
        if let Some(kind) = record.check() {
            violations.push(Violation {
                index,
                doc_id: record.doc_id.clone(),
                kind,
            });
        }
        if !seen.insert(record.source_key()) {
            violations.push(Violation {
                index,
                doc_id: record.doc_id.clone(),
                kind: ViolationKind::DuplicateKey,
            });
        }
    }
    ValidationReport { violations }
}

/// Lowercase, trim, and collapse internal whitespace runs to one space.
pub fn normalize(s: &str) -> String {
    s.split_whitespace()
        .map(|w| w.to_lowercase())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Character-offset slice. `None` when the range leaves the string.
pub fn char_slice(s: &str, start: usize, length: usize) -> Option<&str> {
    let begin = char_to_byte(s, start)?;
    let end = char_to_byte(&s[begin..], length)? + begin;
    Some(&s[begin..end])
}

/// Byte offset of the `n`th char; `n == len` maps to the end of the string.
pub fn char_to_byte(s: &str, n: usize) -> Option<usize> {
    if n == 0 {
        return Some(0);
    }
    match s.char_indices().nth(n) {
        Some((i, _)) => Some(i),
        None if s.chars().count() == n => Some(s.len()),
        None => None,
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum KbError {
    #[error("duplicate entity id {0:?}")]
    DuplicateEntityId(String),
    #[error("invalid entity {id:?}: {reason}")]
    InvalidEntity { id: String, reason: String },
}

/// Entity catalog with a normalized alias index. Titles are indexed as
/// aliases.
#[derive(Debug, Clone, Default)]
pub struct KnowledgeBase {
    entities: BTreeMap<String, Entity>,
    alias_index: BTreeMap<String, Vec<String>>,
    title_index: BTreeMap<String, Vec<String>>,
    url_index: BTreeMap<String, String>,
}

impl KnowledgeBase {
    pub fn from_entities<I>(entities: I) -> Result<Self, KbError>
    where
        I: IntoIterator<Item = Entity>,
    {
        let mut kb = KnowledgeBase::default();
        for entity in entities {
            if entity.id.is_empty() {
                return Err(KbError::InvalidEntity {
                    id: entity.id,
                    reason: "empty id".into(),
                });
            }
            if entity.title.is_empty() {
                return Err(KbError::InvalidEntity {
                    id: entity.id,
                    reason: "empty title".into(),
                });
            }
            if let Some(p) = entity.pagerank {
                if !(p > 0.0 && p.is_finite()) {
                    return Err(KbError::InvalidEntity {
                        id: entity.id,
                        reason: format!("pagerank must be strictly positive, got {p}"),
                    });
                }
            }
            if kb.entities.contains_key(&entity.id) {
                return Err(KbError::DuplicateEntityId(entity.id));
            }
            kb.entities.insert(entity.id.clone(), entity);
        }
        kb.build_indexes();
        Ok(kb)
    }

    fn build_indexes(&mut self) {
        for entity in self.entities.values() {
            let surfaces = std::iter::once(&entity.title).chain(entity.aliases.iter());
            for surface in surfaces {
                let key = normalize(surface);
                if key.is_empty() {
                    continue;
                }
                let ids = self.alias_index.entry(key).or_default();
                // entities are visited in id order, so pushing keeps the list sorted
                if ids.last() != Some(&entity.id) {
                    ids.push(entity.id.clone());
                }
            }
            self.title_index
                .entry(normalize(&entity.title))
                .or_default()
                .push(entity.id.clone());
            if let Some(url) = &entity.url {
                self.url_index
                    .entry(url.clone())
                    .or_insert_with(|| entity.id.clone());
            }
        }
    }

    pub fn get(&self, id: &str) -> Option<&Entity> {
        self.entities.get(id)
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    /// Entities in id order.
    pub fn entities(&self) -> impl Iterator<Item = &Entity> {
        self.entities.values()
    }

    pub fn alias_index(&self) -> &BTreeMap<String, Vec<String>> {
        &self.alias_index
    }

    /// Ids whose normalized alias set contains `normalize(surface)`, sorted.
    pub fn lookup_alias(&self, surface: &str) -> &[String] {
        self.alias_index
            .get(&normalize(surface))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn lookup_title(&self, title: &str) -> &[String] {
        self.title_index
            .get(&normalize(title))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn lookup_url(&self, url: &str) -> Option<&str> {
        self.url_index.get(url).map(String::as_str)
    }
}
