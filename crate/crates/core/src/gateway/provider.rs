//! Completion providers.

use std::time::Duration;

use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::linker::tokenize;

use super::GenerationParams;

/// Environment variable holding the bearer token for HTTP providers.
pub const API_KEY_ENV: &str = "LLMAEL_API_KEY";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProviderError {
    /// Transport or server-side failure; worth retrying.
    #[error("unavailable: {0}")]
    Unavailable(String),
    /// The provider understood and refused the request.
    #[error("rejected: {0}")]
    Rejected(String),
}

/// Something that turns a prompt into generated text.
pub trait CompletionProvider: Send + Sync {
    fn name(&self) -> &str;
    fn model(&self) -> &str;
    fn complete(&self, prompt: &str, params: &GenerationParams) -> Result<String, ProviderError>;

    /// `name/model`, the label stored with generated records.
    fn label(&self) -> String {
        format!("{}/{}", self.name(), self.model())
    }
}

/// Offline provider for augmentation prompts.
///
/// Answers `"{surface} is mentioned here. "` followed by the sentence of
/// the context that contains the mention. An optional lexicon of
/// `(cue, gloss)` pairs stands in for world knowledge: every gloss whose
/// cue token occurs in that sentence is appended, in lexicon order.
#[derive(Debug, Clone, Default)]
pub struct MockProvider {
    lexicon: Vec<(String, String)>,
    model: String,
}

impl MockProvider {
    pub fn new() -> Self {
        Self::with_lexicon(Vec::new())
    }

    pub fn with_lexicon(lexicon: Vec<(String, String)>) -> Self {
        let lexicon: Vec<(String, String)> = lexicon
            .into_iter()
            .map(|(cue, gloss)| (cue.to_lowercase(), gloss))
            .collect();
        let model = if lexicon.is_empty() {
            "echo".to_string()
        } else {
            let mut hasher = Sha256::new();
            for (cue, gloss) in &lexicon {
                hasher.update(cue.as_bytes());
                hasher.update([0]);
                hasher.update(gloss.as_bytes());
                hasher.update([0]);
            }
            format!("echo+lex-{}", &hex::encode(hasher.finalize())[..12])
        };
        MockProvider { lexicon, model }
    }

    /// The answer for a mention given its unwrapped context.
    pub fn describe(&self, surface: &str, context: &str, mention_byte: usize) -> String {
        let sentence = sentence_around(context, mention_byte, mention_byte + surface.len());
        let mut out = format!("{surface} is mentioned here. {sentence}");
        let tokens = tokenize(sentence);
        for (cue, gloss) in &self.lexicon {
            if tokens.contains(cue) {
                out.push(' ');
                out.push_str(gloss);
            }
        }
        out
    }
}

const QUERY_MARK: &str = "\nPlease provide me more descriptive information about { ";
const QUERY_END: &str = " } from the text above.";

/// Recovers `(surface, unwrapped context, byte offset of the mention)` from
/// the final query of an augmentation prompt.
fn parse_augment_query(prompt: &str) -> Option<(String, String, usize)> {
    let mark = prompt.rfind(QUERY_MARK)?;
    let rest = &prompt[mark + QUERY_MARK.len()..];
    let surface = &rest[..rest.find(QUERY_END)?];
    let text_at = prompt[..mark].rfind("Text: ")? + "Text: ".len();
    let wrapped = &prompt[text_at..mark];
    let wrap = format!("{{ {surface} }}");
    let at = wrapped.find(&wrap)?;
    let context = format!("{}{surface}{}", &wrapped[..at], &wrapped[at + wrap.len()..]);
    Some((surface.to_string(), context, at))
}

fn is_boundary(text: &str, i: usize, c: char) -> bool {
    match c {
        '\n' => true,
        '.' | '!' | '?' => text[i + c.len_utf8()..]
            .chars()
            .next()
            .is_none_or(char::is_whitespace),
        _ => false,
    }
}

/// The sentence containing bytes `begin..end`, trimmed.
fn sentence_around(text: &str, begin: usize, end: usize) -> &str {
    let start = text[..begin]
        .char_indices()
        .rev()
        .find(|&(i, c)| is_boundary(text, i, c))
        .map(|(i, c)| i + c.len_utf8())
        .unwrap_or(0);
    let stop = text[end..]
        .char_indices()
        .find(|&(i, c)| is_boundary(text, end + i, c))
        .map(|(i, c)| end + i + if c == '\n' { 0 } else { c.len_utf8() })
        .unwrap_or(text.len());
    text[start..stop].trim()
}

impl CompletionProvider for MockProvider {
    fn name(&self) -> &str {
        "mock"
    }

    fn model(&self) -> &str {
        &self.model
    }

    fn complete(&self, prompt: &str, _params: &GenerationParams) -> Result<String, ProviderError> {
        let (surface, context, at) = parse_augment_query(prompt).ok_or_else(|| {
            ProviderError::Rejected("mock provider only answers augmentation prompts".into())
        })?;
        Ok(self.describe(&surface, &context, at))
    }
}

/// Client for a chat/completions-style HTTP endpoint.
pub struct HttpProvider {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpProvider {
    pub fn new(
        endpoint: impl Into<String>,
        model: impl Into<String>,
        api_key: Option<String>,
    ) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(120)))
            .http_status_as_error(false)
            .build()
            .into();
        HttpProvider {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key,
            agent,
        }
    }

    /// Reads the bearer token from `LLMAEL_API_KEY` when set.
    pub fn from_env(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        let key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        Self::new(endpoint, model, key)
    }

    fn request_body(&self, prompt: &str, params: &GenerationParams) -> Value {
        let mut body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "max_tokens": params.max_tokens,
            "temperature": params.temperature,
        });
        if let Some(obj) = body.as_object_mut() {
            for (k, v) in &params.extra {
                obj.entry(k.clone())
                    .or_insert_with(|| Value::from(v.clone()));
            }
        }
        body
    }
}

/// Pulls the generated text out of a chat or legacy completion response.
pub fn completion_text(body: &Value) -> Option<&str> {
    let choice = body.get("choices")?.get(0)?;
    choice
        .get("message")
        .and_then(|m| m.get("content"))
        .and_then(Value::as_str)
        .or_else(|| choice.get("text").and_then(Value::as_str))
}

impl CompletionProvider for HttpProvider {
    fn name(&self) -> &str {
        "http"
    }

    fn model(&self) -> &str {
        &self.model
    }

    fn complete(&self, prompt: &str, params: &GenerationParams) -> Result<String, ProviderError> {
        let mut req = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(self.request_body(prompt, params))
            .map_err(|e| ProviderError::Unavailable(format!("{}: {e}", self.endpoint)))?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| ProviderError::Unavailable(e.to_string()))?;
        match status {
            200..=299 => {}
            408 | 429 | 500..=599 => {
                return Err(ProviderError::Unavailable(format!("HTTP {status}: {body}")))
            }
            _ => return Err(ProviderError::Rejected(format!("HTTP {status}: {body}"))),
        }
        let value: Value = serde_json::from_str(&body)
            .map_err(|e| ProviderError::Rejected(format!("malformed response: {e}")))?;
        completion_text(&value)
            .map(str::to_string)
            .ok_or_else(|| ProviderError::Rejected("response has no completion text".into()))
    }
}
