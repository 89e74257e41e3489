//! Dataset-level glue: link every mention of a dataset, score prediction
//! sets against their gold datasets.

use thiserror::Error;

use crate::eval::{accuracy, EvalError, EvalOptions, ScoreTable};
use crate::fusion::FusedContext;
use crate::io::PredictionSet;
use crate::linker::{link_batch, LinkError, LinkerBackend};
use crate::model::{Dataset, MentionKey};
use crate::par::Execution;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("linking {key} failed: {source}")]
    Link {
        key: MentionKey,
        #[source]
        source: LinkError,
    },
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Links each record of `dataset` as-is. Records produced by fusion carry
/// the fused text and span, so this covers both original and augmented
/// contexts. Predictions are keyed by the source mention so they line up
/// with the gold dataset. Output order follows the dataset.
pub fn link_dataset(
    backend: &dyn LinkerBackend,
    dataset: &Dataset,
    top_k: usize,
    exec: Execution,
    max_in_flight: usize,
) -> Result<PredictionSet, PipelineError> {
    let contexts: Vec<FusedContext> = dataset
        .records
        .iter()
        .map(FusedContext::from_mention)
        .collect();
    let results = link_batch(backend, &contexts, top_k, exec, max_in_flight);
    let mut set = PredictionSet::new(backend.name());
    for (mc, result) in dataset.records.iter().zip(results) {
        let key = mc.source_key();
        match result {
            Ok(prediction) => set.insert(key, prediction),
            Err(source) => return Err(PipelineError::Link { key, source }),
        }
    }
    Ok(set)
}

/// Scores each prediction set against the dataset of the same position and
/// collects the results under `system`.
pub fn score_datasets(
    table: &mut ScoreTable,
    system: &str,
    preds: &[PredictionSet],
    gold: &[Dataset],
    opts: EvalOptions,
) -> Result<(), PipelineError> {
    if preds.len() != gold.len() {
        return Err(EvalError::LengthMismatch {
            preds: preds.len(),
            gold: gold.len(),
        }
        .into());
    }
    for (p, g) in preds.iter().zip(gold) {
        table.insert(system, &g.name, accuracy(p, g, opts)?);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linker::BaselineLinker;
    use crate::model::{Entity, KnowledgeBase, MentionContext};

    #[test]
    fn links_in_dataset_order() {
        let kb = KnowledgeBase::from_entities(vec![
            Entity::new("Q1", "Paris").with_description("capital city of france"),
            Entity::new("Q2", "Paris Hilton")
                .with_aliases(["Paris"])
                .with_description("hotel heiress celebrity"),
        ])
        .unwrap();
        let ds = Dataset::new(
            "toy",
            vec![
                MentionContext::locate("a", "Paris hotel heiress", "Paris", "Q2").unwrap(),
                MentionContext::locate("b", "Paris capital of france", "Paris", "Q1").unwrap(),
            ],
        );
        let linker = BaselineLinker::new(&kb);
        for exec in [Execution::Sequential, Execution::Parallel] {
            let set = link_dataset(&linker, &ds, 10, exec, 4).unwrap();
            let tops: Vec<&str> = set
                .records
                .values()
                .map(|p| p.top1().unwrap().entity_id.as_str())
                .collect();
            assert_eq!(tops, ["Q2", "Q1"]);
            let mut table = ScoreTable::new();
            score_datasets(
                &mut table,
                "base",
                &[set],
                std::slice::from_ref(&ds),
                EvalOptions::default(),
            )
            .unwrap();
            assert_eq!(table.avg("base"), Some(100.0));
        }
    }

    #[test]
    fn fused_predictions_align_with_gold() {
        use crate::fusion::{augment_training_set, JoinStrategy};
        use crate::gateway::GenerationParams;
        use crate::io::{AugmentationRecord, AugmentationSet};

        let kb = KnowledgeBase::from_entities(vec![
            Entity::new("Q1", "Paris").with_description("capital city of france"),
            Entity::new("Q2", "Paris Hilton")
                .with_aliases(["Paris"])
                .with_description("hotel heiress celebrity"),
        ])
        .unwrap();
        let a = MentionContext::new("doc", "Paris smiled. Paris waved.", 0, 5, "Paris", "Q2");
        let b = MentionContext::new("doc", "Paris smiled. Paris waved.", 14, 5, "Paris", "Q2");
        let gold = Dataset::new("toy", vec![a.clone(), b.clone()]);
        let mut aug = AugmentationSet::new("mock/echo", GenerationParams::default());
        aug.insert(AugmentationRecord::new(
            &a,
            "mock/echo",
            "Paris is a hotel heiress.",
        ));
        aug.insert(AugmentationRecord::new(
            &b,
            "mock/echo",
            "Paris is a celebrity heiress.",
        ));
        let fused = augment_training_set(&gold, &aug, JoinStrategy::from_id(1).unwrap()).unwrap();
        assert_eq!(fused.records[0].key(), fused.records[1].key());
        assert!(crate::model::validate_dataset(&fused).is_empty());
        let preds = link_dataset(
            &BaselineLinker::new(&kb),
            &fused,
            10,
            Execution::Sequential,
            1,
        )
        .unwrap();
        assert_eq!(
            preds.records.keys().cloned().collect::<Vec<_>>(),
            vec![a.key(), b.key()]
        );
        let mut table = ScoreTable::new();
        score_datasets(&mut table, "s1", &[preds], &[gold], EvalOptions::default()).unwrap();
        assert_eq!(table.avg("s1"), Some(100.0));
    }
}
