//! Entity linkers: the backend contract, a token-overlap baseline over a
//! local knowledge base, and a client for remote linking services.

use std::collections::BTreeSet;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::FusedContext;
use crate::model::Entity;
use crate::model::KnowledgeBase;
use crate::par::{self, Execution};

/// Additive smoothing applied to baseline scores before normalizing.
pub const SCORE_EPSILON: f64 = 1e-6;

/// Allowed deviation of a probability list from summing to one.
pub const SIMPLEX_TOLERANCE: f64 = 1e-6;

pub const DEFAULT_TOP_K: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub entity_id: String,
    pub prob: f64,
}

impl Candidate {
    pub fn new(entity_id: impl Into<String>, prob: f64) -> Self {
        Candidate {
            entity_id: entity_id.into(),
            prob,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PredictionError {
    #[error("probability {prob} of {entity_id:?} is outside [0, 1]")]
    OutOfRange { entity_id: String, prob: f64 },
    #[error("probabilities sum to {0}, expected 1")]
    NotNormalized(f64),
    #[error("candidate list is not sorted by descending probability")]
    NotSorted,
    #[error("entity {0:?} appears twice")]
    Duplicate(String),
}

/// An ordered candidate list with probabilities that sum to one. An empty
/// list means the system made no prediction.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RankedPrediction {
    candidates: Vec<Candidate>,
}

impl RankedPrediction {
    pub fn new(candidates: Vec<Candidate>) -> Result<Self, PredictionError> {
        let mut seen = BTreeSet::new();
        for c in &candidates {
            if !(0.0..=1.0).contains(&c.prob) {
                return Err(PredictionError::OutOfRange {
                    entity_id: c.entity_id.clone(),
                    prob: c.prob,
                });
            }
            if !seen.insert(c.entity_id.as_str()) {
                return Err(PredictionError::Duplicate(c.entity_id.clone()));
            }
        }
        if candidates.windows(2).any(|w| w[0].prob < w[1].prob) {
            return Err(PredictionError::NotSorted);
        }
        if !candidates.is_empty() {
            let sum: f64 = candidates.iter().map(|c| c.prob).sum();
            if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
                return Err(PredictionError::NotNormalized(sum));
            }
        }
        Ok(RankedPrediction { candidates })
    }

    pub fn no_prediction() -> Self {
        RankedPrediction::default()
    }

    pub fn is_no_prediction(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn candidates(&self) -> &[Candidate] {
        &self.candidates
    }

    pub fn top1(&self) -> Option<&Candidate> {
        self.candidates.first()
    }

    pub fn into_candidates(self) -> Vec<Candidate> {
        self.candidates
    }
}

#[derive(Debug, Error)]
pub enum LinkError {
    #[error("linking backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("linking protocol violation: {0}")]
    ProtocolViolation(String),
}

/// A system that resolves the mention in a fused context. Implementations
/// must be deterministic for fixed inputs and fixed state.
pub trait LinkerBackend: Send + Sync {
    fn name(&self) -> &str;
    fn link(&self, fc: &FusedContext, top_k: usize) -> Result<RankedPrediction, LinkError>;
}

/// Links a batch; results come back in input order.
pub fn link_batch(
    backend: &dyn LinkerBackend,
    contexts: &[FusedContext],
    top_k: usize,
    exec: Execution,
    max_in_flight: usize,
) -> Vec<Result<RankedPrediction, LinkError>> {
    par::map_bounded(exec, max_in_flight, contexts, |fc| backend.link(fc, top_k))
}

/// Lowercased alphanumeric runs of at least two chars.
pub fn tokenize(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.chars().count() >= 2)
        .map(str::to_lowercase)
        .collect()
}

pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Entities sharing the mention's normalized alias, in id order.
pub fn baseline_candidates<'kb>(kb: &'kb KnowledgeBase, surface: &str) -> Vec<&'kb Entity> {
    kb.lookup_alias(surface)
        .iter()
        .filter_map(|id| kb.get(id))
        .collect()
}

/// Ranks alias candidates by Jaccard overlap between the context tokens
/// (minus the mention's own tokens) and each entity description.
/// Probabilities are smoothed scores renormalized over the kept top-k.
pub fn baseline_link(kb: &KnowledgeBase, fc: &FusedContext, top_k: usize) -> RankedPrediction {
    let candidates = baseline_candidates(kb, &fc.surface);
    if candidates.is_empty() || top_k == 0 {
        return RankedPrediction::no_prediction();
    }
    let surface_tokens = tokenize(&fc.surface);
    let context: BTreeSet<String> = tokenize(&fc.text)
        .difference(&surface_tokens)
        .cloned()
        .collect();

    let mut scored: Vec<(&str, f64)> = candidates
        .iter()
        .map(|e| (e.id.as_str(), jaccard(&context, &tokenize(&e.description))))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    scored.truncate(top_k);

    let total: f64 = scored.iter().map(|(_, s)| s + SCORE_EPSILON).sum();
    let candidates = scored
        .into_iter()
        .map(|(id, s)| Candidate::new(id, (s + SCORE_EPSILON) / total))
        .collect();
    RankedPrediction { candidates }
}

pub struct BaselineLinker<'kb> {
    kb: &'kb KnowledgeBase,
}

impl<'kb> BaselineLinker<'kb> {
    pub fn new(kb: &'kb KnowledgeBase) -> Self {
        BaselineLinker { kb }
    }
}

impl LinkerBackend for BaselineLinker<'_> {
    fn name(&self) -> &str {
        "baseline"
    }

    fn link(&self, fc: &FusedContext, top_k: usize) -> Result<RankedPrediction, LinkError> {
        Ok(baseline_link(self.kb, fc, top_k))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkRequest {
    pub context: String,
    pub start: usize,
    pub length: usize,
    pub top_k: usize,
}

impl LinkRequest {
    pub fn new(fc: &FusedContext, top_k: usize) -> Self {
        LinkRequest {
            context: fc.text.clone(),
            start: fc.start,
            length: fc.length,
            top_k,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireCandidate {
    pub entity_id: String,
    #[serde(default)]
    pub title: String,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkResponse {
    pub backend: String,
    pub candidates: Vec<WireCandidate>,
    #[serde(default)]
    pub no_prediction: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub backend: String,
}

/// Checks a decoded `/link` response and converts it to a prediction.
///
/// Probabilities summing to anything in `[0.5, 2]` are rescaled to one;
/// candidates are re-sorted by probability, ties by entity id.
pub fn validate_link_response(resp: LinkResponse) -> Result<(String, RankedPrediction), LinkError> {
    let violation = |msg: String| Err(LinkError::ProtocolViolation(msg));
    if resp.candidates.is_empty() {
        return Ok((resp.backend, RankedPrediction::no_prediction()));
    }
    if resp.no_prediction {
        return violation("no_prediction set but candidates returned".into());
    }
    let mut seen = BTreeSet::new();
    for c in &resp.candidates {
        if !c.prob.is_finite() || c.prob < 0.0 {
            return violation(format!(
                "invalid probability {} for {:?}",
                c.prob, c.entity_id
            ));
        }
        if c.entity_id.is_empty() {
            return violation("empty entity_id".into());
        }
        if !seen.insert(c.entity_id.as_str()) {
            return violation(format!("duplicate candidate {:?}", c.entity_id));
        }
    }
    let sum: f64 = resp.candidates.iter().map(|c| c.prob).sum();
    if !(0.5..=2.0).contains(&sum) {
        return violation(format!("probabilities sum to {sum}"));
    }
    let mut candidates: Vec<Candidate> = resp
        .candidates
        .into_iter()
        .map(|c| Candidate::new(c.entity_id, (c.prob / sum).min(1.0)))
        .collect();
    candidates.sort_by(|a, b| {
        b.prob
            .total_cmp(&a.prob)
            .then_with(|| a.entity_id.cmp(&b.entity_id))
    });
    let prediction = RankedPrediction::new(candidates)
        .map_err(|e| LinkError::ProtocolViolation(e.to_string()))?;
    Ok((resp.backend, prediction))
}

/// Parses and validates a raw `/link` body.
pub fn parse_link_response(body: &str) -> Result<(String, RankedPrediction), LinkError> {
    let resp: LinkResponse = serde_json::from_str(body)
        .map_err(|e| LinkError::ProtocolViolation(format!("malformed response: {e}")))?;
    validate_link_response(resp)
}

/// Client for a linking service speaking the `/link` + `/health` protocol.
pub struct RemoteLinker {
    endpoint: String,
    name: String,
    agent: ureq::Agent,
}

impl RemoteLinker {
    pub fn new(endpoint: impl Into<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(120)))
            .http_status_as_error(false)
            .build()
            .into();
        let endpoint = endpoint.into().trim_end_matches('/').to_string();
        RemoteLinker {
            name: format!("remote({endpoint})"),
            endpoint,
            agent,
        }
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    pub fn health(&self) -> Result<HealthResponse, LinkError> {
        let url = format!("{}/health", self.endpoint);
        let mut resp = self
            .agent
            .get(&url)
            .call()
            .map_err(|e| LinkError::BackendUnavailable(format!("{url}: {e}")))?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| LinkError::BackendUnavailable(format!("{url}: {e}")))?;
        if status != 200 {
            return Err(LinkError::BackendUnavailable(format!(
                "{url}: HTTP {status}"
            )));
        }
        serde_json::from_str(&body)
            .map_err(|e| LinkError::ProtocolViolation(format!("malformed health response: {e}")))
    }

    /// Posts one linking request and returns the backend's label with its
    /// validated prediction.
    pub fn remote_link(
        &self,
        fc: &FusedContext,
        top_k: usize,
    ) -> Result<(String, RankedPrediction), LinkError> {
        let url = format!("{}/link", self.endpoint);
        let mut resp = self
            .agent
            .post(&url)
            .send_json(LinkRequest::new(fc, top_k))
            .map_err(|e| LinkError::BackendUnavailable(format!("{url}: {e}")))?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| LinkError::BackendUnavailable(format!("{url}: {e}")))?;
        match status {
            200 => parse_link_response(&body),
            503 => Err(LinkError::BackendUnavailable(format!("{url}: loading"))),
            _ => Err(LinkError::ProtocolViolation(format!(
                "{url}: HTTP {status}: {body}"
            ))),
        }
    }
}

impl LinkerBackend for RemoteLinker {
    fn name(&self) -> &str {
        &self.name
    }

    fn link(&self, fc: &FusedContext, top_k: usize) -> Result<RankedPrediction, LinkError> {
        self.remote_link(fc, top_k).map(|(_, p)| p)
    }
}
