//! Hard and soft voting over predictions from several systems.
//!
//! Both votes ignore input order: ties are settled by probabilities and
//! then by entity id, never by position. Systems without a prediction are
//! left out.

use std::collections::BTreeMap;

use crate::io::PredictionSet;
use crate::linker::{Candidate, RankedPrediction};
use crate::model::MentionKey;

/// Probability differences below this are treated as ties.
pub const TIE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct VoteInput {
    pub system: String,
    pub prediction: RankedPrediction,
}

impl VoteInput {
    pub fn new(system: impl Into<String>, prediction: RankedPrediction) -> Self {
        VoteInput {
            system: system.into(),
            prediction,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VoteMethod {
    Hard,
    Soft,
}

impl VoteMethod {
    pub fn label(self) -> &'static str {
        match self {
            VoteMethod::Hard => "hard-vote",
            VoteMethod::Soft => "soft-vote",
        }
    }
}

impl std::str::FromStr for VoteMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hard" | "hard-vote" => Ok(VoteMethod::Hard),
            "soft" | "soft-vote" => Ok(VoteMethod::Soft),
            other => Err(format!("unknown vote method {other:?}")),
        }
    }
}

/// Sum independent of the order the terms arrive in.
fn stable_sum(mut terms: Vec<f64>) -> f64 {
    terms.sort_by(f64::total_cmp);
    terms.into_iter().sum()
}

/// Picks the best `(entity, key)` by `better`, scanning in id order so that
/// remaining ties go to the smallest id.
fn argmax<K>(scores: BTreeMap<&str, K>, better: impl Fn(&K, &K) -> bool) -> Option<String> {
    let mut best: Option<(&str, K)> = None;
    for (id, score) in scores {
        match &best {
            Some((_, b)) if !better(&score, b) => {}
            _ => best = Some((id, score)),
        }
    }
    best.map(|(id, _)| id.to_string())
}

/// Most frequent top-1 entity. Frequency ties go to the entity with the
/// highest top-1 probability any system gave it, then to the smallest id.
pub fn hard_vote(inputs: &[VoteInput]) -> Option<String> {
    let mut tally: BTreeMap<&str, (usize, f64)> = BTreeMap::new();
    for top in inputs.iter().filter_map(|i| i.prediction.top1()) {
        let entry = tally
            .entry(top.entity_id.as_str())
            .or_insert((0, f64::NEG_INFINITY));
        entry.0 += 1;
        entry.1 = entry.1.max(top.prob);
    }
    argmax(tally, |a, b| {
        a.0 > b.0 || (a.0 == b.0 && a.1 > b.1 + TIE_TOLERANCE)
    })
}

/// Entity with the largest probability summed over all systems; exact ties
/// go to the smallest id.
pub fn soft_vote(inputs: &[VoteInput]) -> Option<String> {
    let mut terms: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for c in inputs.iter().flat_map(|i| i.prediction.candidates()) {
        terms.entry(c.entity_id.as_str()).or_default().push(c.prob);
    }
    let sums: BTreeMap<&str, f64> = terms.into_iter().map(|(k, v)| (k, stable_sum(v))).collect();
    argmax(sums, |a, b| *a > *b + TIE_TOLERANCE)
}

pub fn vote(method: VoteMethod, inputs: &[VoteInput]) -> Option<String> {
    match method {
        VoteMethod::Hard => hard_vote(inputs),
        VoteMethod::Soft => soft_vote(inputs),
    }
}

/// `hard-vote(a,b,...)` / `soft-vote(a,b,...)`.
pub fn ensemble_label(method: VoteMethod, systems: &[&str]) -> String {
    format!("{}({})", method.label(), systems.join(","))
}

/// Votes mention by mention over several prediction files. Mentions are
/// taken in first-seen order across the inputs; the winner is written as a
/// single candidate with probability one.
pub fn vote_prediction_sets(method: VoteMethod, sets: &[PredictionSet]) -> PredictionSet {
    let systems: Vec<&str> = sets.iter().map(|s| s.system.as_str()).collect();
    let mut out = PredictionSet::new(ensemble_label(method, &systems));
    let mut keys: indexmap::IndexSet<&MentionKey> = indexmap::IndexSet::new();
    for set in sets {
        keys.extend(set.records.keys());
    }
    for key in keys {
        let inputs: Vec<VoteInput> = sets
            .iter()
            .filter_map(|s| {
                s.get(key)
                    .map(|p| VoteInput::new(s.system.clone(), p.clone()))
            })
            .collect();
        let prediction = match vote(method, &inputs) {
            Some(id) => RankedPrediction::new(vec![Candidate::new(id, 1.0)])
                .expect("single candidate with probability one"),
            None => RankedPrediction::no_prediction(),
        };
        out.insert(key.clone(), prediction);
    }
    out
}
