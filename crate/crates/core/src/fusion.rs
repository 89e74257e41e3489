//! Joining an LLM-generated description with the original document.
//!
//! A [`JoinStrategy`] fixes two things: the order of the two texts, and
//! which copy of the mention the linker is pointed at. The two parts are
//! always separated by a single `"\n"`.

use std::fmt;

use indexmap::IndexMap;
use serde_json::Value;
use thiserror::Error;

use crate::io::AugmentationSet;
use crate::model::{char_slice, Dataset, MentionContext, MentionKey, SOURCE_LENGTH, SOURCE_START};
use crate::par::{self, Execution};

pub const SEPARATOR: &str = "\n";

/// The strategy used when none is configured.
pub const DEFAULT_STRATEGY_ID: u8 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContextOrder {
    LlmOnly,
    LlmThenOriginal,
    OriginalThenLlm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OffsetSource {
    Llm,
    Original,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct JoinStrategy(u8);

impl JoinStrategy {
    pub const ALL: [JoinStrategy; 5] = [
        JoinStrategy(0),
        JoinStrategy(1),
        JoinStrategy(2),
        JoinStrategy(3),
        JoinStrategy(4),
    ];

    pub fn from_id(id: u8) -> Result<Self, FusionError> {
        if id <= 4 {
            Ok(JoinStrategy(id))
        } else {
            Err(FusionError::UnknownStrategy(id))
        }
    }

    pub fn id(self) -> u8 {
        self.0
    }

    pub fn order(self) -> ContextOrder {
        match self.0 {
            0 => ContextOrder::LlmOnly,
            1 | 2 => ContextOrder::LlmThenOriginal,
            _ => ContextOrder::OriginalThenLlm,
        }
    }

    pub fn offset_source(self) -> OffsetSource {
        match self.0 {
            0 | 1 | 3 => OffsetSource::Llm,
            _ => OffsetSource::Original,
        }
    }
}

impl Default for JoinStrategy {
    fn default() -> Self {
        JoinStrategy(DEFAULT_STRATEGY_ID)
    }
}

impl fmt::Display for JoinStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}", self.0)
    }
}

/// Text handed to a linker together with the one authoritative mention span.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FusedContext {
    pub text: String,
    pub start: usize,
    pub length: usize,
    pub surface: String,
    /// `None` for an unaugmented original context.
    pub strategy_id: Option<u8>,
    pub fallback_applied: bool,
}

impl FusedContext {
    /// Wraps a dataset record as-is. Fused records written by
    /// [`FusedContext::to_mention`] carry their strategy in extra fields.
    pub fn from_mention(mc: &MentionContext) -> Self {
        FusedContext {
            text: mc.context.clone(),
            start: mc.start,
            length: mc.length,
            surface: mc.surface.clone(),
            strategy_id: mc
                .extra
                .get("strategy_id")
                .and_then(Value::as_u64)
                .and_then(|v| u8::try_from(v).ok()),
            fallback_applied: mc
                .extra
                .get("fallback_applied")
                .and_then(Value::as_bool)
                .unwrap_or(false),
        }
    }

    /// The text under the span.
    pub fn span_text(&self) -> Option<&str> {
        char_slice(&self.text, self.start, self.length)
    }

    /// A dataset record for this fused context. The surface is taken from
    /// the fused text so the record always validates.
    pub fn to_mention(&self, original: &MentionContext) -> MentionContext {
        let mut extra = original.extra.clone();
        if let Some(id) = self.strategy_id {
            extra.insert("strategy_id".into(), Value::from(id));
            extra.insert(
                "fallback_applied".into(),
                Value::from(self.fallback_applied),
            );
        }
        let source = original.source_key();
        extra.insert(SOURCE_START.into(), Value::from(source.start));
        extra.insert(SOURCE_LENGTH.into(), Value::from(source.length));
        MentionContext {
            doc_id: original.doc_id.clone(),
            context: self.text.clone(),
            start: self.start,
            length: self.length,
            surface: self.span_text().unwrap_or(&self.surface).to_string(),
            gold_entity_id: original.gold_entity_id.clone(),
            extra,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FusionError {
    #[error("unknown joining strategy {0}; expected 0..=4")]
    UnknownStrategy(u8),
    #[error("empty description")]
    EmptyDescription,
    #[error("invalid mention {key}: {detail}")]
    InvalidMention { key: MentionKey, detail: String },
    #[error("mention at {start}+{length} does not fit in {max_chars} chars")]
    MentionTruncated {
        start: usize,
        length: usize,
        max_chars: usize,
    },
    #[error("no augmentation for mention {0}")]
    MissingAugmentation(MentionKey),
}

fn chars_eq_ignore_case(a: char, b: char) -> bool {
    a == b || a.to_lowercase().eq(b.to_lowercase())
}

/// Char offset of the first case-insensitive occurrence of `needle`.
/// Comparison is per char so offsets stay in the haystack's coordinates.
pub fn find_ignore_case(haystack: &str, needle: &str) -> Option<usize> {
    let hay: Vec<char> = haystack.chars().collect();
    let pat: Vec<char> = needle.chars().collect();
    if pat.is_empty() || pat.len() > hay.len() {
        return None;
    }
    (0..=hay.len() - pat.len()).find(|&i| {
        hay[i..i + pat.len()]
            .iter()
            .zip(&pat)
            .all(|(&h, &p)| chars_eq_ignore_case(h, p))
    })
}

/// Joins `description` with the mention's context under `strategy`.
///
/// When the strategy points at the description's copy of the mention and
/// the description never names it, the original span is used instead
/// (strategy 0 returns the untouched original context) and
/// `fallback_applied` is set.
pub fn fuse(
    mc: &MentionContext,
    description: &str,
    strategy: JoinStrategy,
) -> Result<FusedContext, FusionError> {
    if description.trim().is_empty() {
        return Err(FusionError::EmptyDescription);
    }
    if let Some(kind) = mc.check() {
        return Err(FusionError::InvalidMention {
            key: mc.key(),
            detail: kind.to_string(),
        });
    }

    let desc_len = description.chars().count();
    let ctx_len = mc.context_chars();
    // (text, offset of description part, offset of original part)
    let (text, desc_at, orig_at) = match strategy.order() {
        ContextOrder::LlmOnly => (description.to_string(), 0, None),
        ContextOrder::LlmThenOriginal => (
            format!("{description}{SEPARATOR}{}", mc.context),
            0,
            Some(desc_len + 1),
        ),
        ContextOrder::OriginalThenLlm => (
            format!("{}{SEPARATOR}{description}", mc.context),
            ctx_len + 1,
            Some(0),
        ),
    };

    let fused = |text: String, start: usize, fallback_applied: bool| FusedContext {
        text,
        start,
        length: mc.length,
        surface: mc.surface.clone(),
        strategy_id: Some(strategy.id()),
        fallback_applied,
    };

    match (strategy.offset_source(), orig_at) {
        (OffsetSource::Original, Some(orig_at)) => Ok(fused(text, orig_at + mc.start, false)),
        (OffsetSource::Original, None) => unreachable!("original offset without original text"),
        (OffsetSource::Llm, _) => match find_ignore_case(description, &mc.surface) {
            Some(i) => Ok(fused(text, desc_at + i, false)),
            None => match orig_at {
                Some(orig_at) => Ok(fused(text, orig_at + mc.start, true)),
                None => Ok(fused(mc.context.clone(), mc.start, true)),
            },
        },
    }
}

/// Keeps the first `max_chars` chars. Fails rather than cut the mention.
pub fn truncate(fc: &FusedContext, max_chars: usize) -> Result<FusedContext, FusionError> {
    if fc.start + fc.length > max_chars {
        return Err(FusionError::MentionTruncated {
            start: fc.start,
            length: fc.length,
            max_chars,
        });
    }
    let mut out = fc.clone();
    if let Some((byte, _)) = fc.text.char_indices().nth(max_chars) {
        out.text.truncate(byte);
    }
    Ok(out)
}

/// Fuses every mention of `dataset` with its description, optionally
/// truncating. Output order follows the dataset.
pub fn fuse_dataset(
    dataset: &Dataset,
    aug: &AugmentationSet,
    strategy: JoinStrategy,
    max_chars: Option<usize>,
    exec: Execution,
) -> Result<Vec<FusedContext>, FusionError> {
    let descriptions = descriptions_for(dataset, aug)?;
    let pairs: Vec<(&MentionContext, &str)> = dataset.records.iter().zip(descriptions).collect();
    par::map_ordered(exec, &pairs, |(mc, desc)| {
        let fc = fuse(mc, desc, strategy)?;
        match max_chars {
            Some(limit) => truncate(&fc, limit),
            None => Ok(fc),
        }
    })
    .into_iter()
    .collect()
}

fn descriptions_for<'a>(
    dataset: &Dataset,
    aug: &'a AugmentationSet,
) -> Result<Vec<&'a str>, FusionError> {
    let index: IndexMap<&MentionKey, &str> = aug
        .records
        .iter()
        .map(|(k, r)| (k, r.description.as_str()))
        .collect();
    dataset
        .records
        .iter()
        .map(|mc| {
            let key = mc.source_key();
            index
                .get(&key)
                .copied()
                .ok_or(FusionError::MissingAugmentation(key))
        })
        .collect()
}

/// A training set whose contexts are replaced by fused contexts. Gold labels
/// and record order are preserved.
pub fn augment_training_set(
    dataset: &Dataset,
    aug: &AugmentationSet,
    strategy: JoinStrategy,
) -> Result<Dataset, FusionError> {
    augment_training_set_with(dataset, aug, strategy, None, Execution::default())
}

pub fn augment_training_set_with(
    dataset: &Dataset,
    aug: &AugmentationSet,
    strategy: JoinStrategy,
    max_chars: Option<usize>,
    exec: Execution,
) -> Result<Dataset, FusionError> {
    let fused = fuse_dataset(dataset, aug, strategy, max_chars, exec)?;
    let records = dataset
        .records
        .iter()
        .zip(&fused)
        .map(|(mc, fc)| fc.to_mention(mc))
        .collect();
    Ok(Dataset::new(dataset.name.clone(), records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::GenerationParams;
    use crate::io::AugmentationRecord;
    use crate::model::validate_dataset;

    const DESC: &str = "Paris is the capital of France.";

    fn paris() -> MentionContext {
        MentionContext::new("d1", "He visited Paris last week.", 11, 5, "Paris", "Q90")
    }

    fn s(id: u8) -> JoinStrategy {
        JoinStrategy::from_id(id).unwrap()
    }

    fn aug_for(records: &[MentionContext], desc: &str) -> AugmentationSet {
        let mut set = AugmentationSet::new("mock/echo", GenerationParams::default());
        for mc in records {
            set.insert(AugmentationRecord::new(mc, "mock/echo", desc));
        }
        set
    }

    #[test]
    fn strategy_table() {
        use ContextOrder::*;
        use OffsetSource::*;
        let expect = [
            (LlmOnly, Llm),
            (LlmThenOriginal, Llm),
            (LlmThenOriginal, Original),
            (OriginalThenLlm, Llm),
            (OriginalThenLlm, Original),
        ];
        for (strategy, (order, source)) in JoinStrategy::ALL.iter().zip(expect) {
            assert_eq!(strategy.order(), order);
            assert_eq!(strategy.offset_source(), source);
        }
        assert_eq!(
            JoinStrategy::from_id(5),
            Err(FusionError::UnknownStrategy(5))
        );
        assert_eq!(JoinStrategy::default().id(), 4);
    }

    #[test]
    fn worked_examples() {
        let mc = paris();
        let orig_first = "He visited Paris last week.\nParis is the capital of France.";
        let llm_first = "Paris is the capital of France.\nHe visited Paris last week.";
        let cases = [
            (0, DESC, 0),
            (1, llm_first, 0),
            (2, llm_first, 43),
            (3, orig_first, 28),
            (4, orig_first, 11),
        ];
        for (id, text, start) in cases {
            let fc = fuse(&mc, DESC, s(id)).unwrap();
            assert_eq!(fc.text, text, "strategy {id}");
            assert_eq!(fc.start, start, "strategy {id}");
            assert_eq!(fc.length, 5);
            assert_eq!(fc.span_text(), Some("Paris"));
            assert!(!fc.fallback_applied);
        }
    }

    #[test]
    fn llm_offset_is_case_insensitive() {
        let fc = fuse(&paris(), "The city of PARIS is old.", s(1)).unwrap();
        assert_eq!(fc.start, 12);
        assert_eq!(fc.span_text(), Some("PARIS"));
    }

    #[test]
    fn fallback_when_description_lacks_mention() {
        let mc = paris();
        let desc = "A large European capital.";
        let fc1 = fuse(&mc, desc, s(1)).unwrap();
        let fc2 = fuse(&mc, desc, s(2)).unwrap();
        assert!(fc1.fallback_applied && !fc2.fallback_applied);
        assert_eq!(
            (fc1.text.as_str(), fc1.start),
            (fc2.text.as_str(), fc2.start)
        );

        let fc3 = fuse(&mc, desc, s(3)).unwrap();
        let fc4 = fuse(&mc, desc, s(4)).unwrap();
        assert!(fc3.fallback_applied);
        assert_eq!(
            (fc3.text.as_str(), fc3.start),
            (fc4.text.as_str(), fc4.start)
        );

        let fc0 = fuse(&mc, desc, s(0)).unwrap();
        assert!(fc0.fallback_applied);
        assert_eq!(fc0.text, mc.context);
        assert_eq!(fc0.start, 11);
    }

    #[test]
    fn empty_description_rejected() {
        assert_eq!(fuse(&paris(), "", s(4)), Err(FusionError::EmptyDescription));
        assert_eq!(
            fuse(&paris(), "  \n", s(4)),
            Err(FusionError::EmptyDescription)
        );
    }

    #[test]
    fn multibyte_offsets() {
        let mc = MentionContext::locate("d", "Der Zürichsee liegt bei Zürich.", "Zürich", "Q72")
            .unwrap();
        let desc = "Über ZÜRICH: größte Stadt.";
        let fc = fuse(&mc, desc, s(3)).unwrap();
        assert_eq!(fc.start, mc.context_chars() + 1 + 5);
        assert_eq!(fc.span_text(), Some("ZÜRICH"));
    }

    #[test]
    fn truncation() {
        let fc = fuse(&paris(), DESC, s(4)).unwrap();
        assert_eq!(truncate(&fc, 100).unwrap(), fc);
        let cut = truncate(&fc, 30).unwrap();
        let expect: String = fc.text.chars().take(30).collect();
        assert_eq!(cut.text, expect);
        assert_eq!(cut.start, 11);
        assert_eq!(cut.span_text(), Some("Paris"));

        let fc3 = fuse(&paris(), DESC, s(3)).unwrap();
        assert_eq!(
            truncate(&fc3, 20),
            Err(FusionError::MentionTruncated {
                start: 28,
                length: 5,
                max_chars: 20
            })
        );
    }

    #[test]
    fn training_set_preserves_labels_and_validates() {
        let records = vec![
            paris(),
            MentionContext::locate("d2", "Paris Hilton arrived.", "Paris", "Q47899").unwrap(),
        ];
        let d = Dataset::new("train", records.clone());
        let out = augment_training_set(&d, &aug_for(&records, DESC), s(4)).unwrap();
        assert_eq!(out.len(), 2);
        for (a, b) in out.records.iter().zip(&records) {
            assert_eq!(a.gold_entity_id, b.gold_entity_id);
            assert_eq!(a.doc_id, b.doc_id);
            assert_eq!(a.extra.get("strategy_id"), Some(&Value::from(4)));
        }
        assert!(validate_dataset(&out).is_empty());

        let lower = augment_training_set(&d, &aug_for(&records, "paris is a name."), s(1)).unwrap();
        assert!(validate_dataset(&lower).is_empty());
        assert_eq!(lower.records[0].surface, "paris");
    }

    #[test]
    fn training_set_requires_every_augmentation() {
        let records = vec![paris()];
        let d = Dataset::new("train", records);
        let empty = AugmentationSet::new("mock/echo", GenerationParams::default());
        assert_eq!(
            augment_training_set(&d, &empty, s(4)),
            Err(FusionError::MissingAugmentation(MentionKey::new(
                "d1", 11, 5
            )))
        );
    }

    #[test]
    fn fused_record_round_trips_into_context() {
        let mc = paris();
        let fc = fuse(&mc, DESC, s(3)).unwrap();
        let back = FusedContext::from_mention(&fc.to_mention(&mc));
        assert_eq!(back, fc);
    }
}
