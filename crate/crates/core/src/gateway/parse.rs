//! Parsers for LLM answers to the direct linking and re-ranking prompts.
//! They never fail; unusable answers yield `None`.

use std::sync::LazyLock;

use percent_encoding::percent_decode_str;
use regex::Regex;

use crate::model::KnowledgeBase;

static URL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#"https?://[^\s"'<>\[\]]+"#).expect("valid regex"));

static OPTION_LABEL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\(\s*([0-9]+|[A-Za-z])\s*\)").expect("valid regex"));

/// The last URL in an answer, with LaTeX-style `\_` unescaped and trailing
/// punctuation removed.
pub fn extract_last_url(text: &str) -> Option<String> {
    let cleaned = text.replace("\\_", "_");
    let m = URL.find_iter(&cleaned).last()?;
    let url = m
        .as_str()
        .trim_end_matches(['.', ',', ';', ':', '!', '?', ')', '}', '\\']);
    Some(url.to_string())
}

/// Title encoded in a wiki URL's last path segment: underscores become
/// spaces and percent escapes are decoded.
pub fn title_from_url(url: &str) -> Option<String> {
    let path = url.split(['?', '#']).next()?;
    let segment = path.rsplit('/').next()?;
    if segment.is_empty() {
        return None;
    }
    let decoded = percent_decode_str(segment).decode_utf8_lossy();
    let title = decoded.replace('_', " ");
    let title = title.trim();
    (!title.is_empty()).then(|| title.to_string())
}

/// Resolves a direct-linking answer to an entity id: first by exact URL,
/// then by the title encoded in the URL.
pub fn parse_direct_el_answer(text: &str, kb: &KnowledgeBase) -> Option<String> {
    let url = extract_last_url(text)?;
    if let Some(id) = kb.lookup_url(&url) {
        return Some(id.to_string());
    }
    let title = title_from_url(&url)?;
    kb.lookup_title(&title).first().cloned()
}

/// Zero-based option index from the first `(n)` or `(x)` label. Numbers are
/// 1-based, letters start at `a`.
pub fn parse_rerank_answer(text: &str, candidate_count: usize) -> Option<usize> {
    let caps = OPTION_LABEL.captures(text)?;
    let label = caps.get(1)?.as_str();
    let index = match label.parse::<usize>() {
        Ok(n) => n.checked_sub(1)?,
        Err(_) => {
            let c = label.chars().next()?.to_ascii_lowercase();
            (c as usize).checked_sub('a' as usize)?
        }
    };
    (index < candidate_count).then_some(index)
}
