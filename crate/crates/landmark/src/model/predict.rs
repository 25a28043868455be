use super::forward::ForwardOptions;
use super::train::pooled_rows;
use super::{FeatureCache, Model, SceneInput, Task, Toggles};
use crate::eem::pair_position;
use crate::error::ModelError;
use crate::metrics::{Candidate, EvalRecord};
use crate::synth::{freq_predict, MarginalTables, SceneInstance, BACKGROUND};
use crate::tensor::Tape;

/// Scores of one ordered pair over all predicates (background included,
/// but never a candidate).
#[derive(Clone, Debug, PartialEq)]
pub struct PairPrediction {
    pub subject: usize,
    pub object: usize,
    pub scores: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenePrediction {
    pub scene_id: u64,
    /// Labels used for the scene: ground truth in PredCls, predicted in SgCls.
    pub classes: Vec<usize>,
    /// Confidence of each label; ones in PredCls.
    pub entity_scores: Vec<f64>,
    pub pairs: Vec<PairPrediction>,
}

impl ScenePrediction {
    /// Foreground candidates sorted best first.
    pub fn ranked(&self) -> Vec<Candidate> {
        let mut out: Vec<Candidate> = self
            .pairs
            .iter()
            .flat_map(|p| {
                p.scores.iter().enumerate().skip(1).map(move |(k, s)| Candidate {
                    subject: p.subject,
                    object: p.object,
                    predicate: k,
                    score: *s,
                })
            })
            .collect();
        out.sort_by(crate::metrics::rank_order);
        out
    }
}

fn softmax_row(row: &[f64]) -> Vec<f64> {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Scores every ordered pair of `scene` given the labels the language
/// modules should read and each label's confidence.
///
/// A pair's predicate score is its softmax probability times both entity
/// confidences.
pub fn predict_with_labels(
    model: &Model,
    scene: &SceneInstance,
    pooled_scene: &[f64],
    cache: &FeatureCache,
    toggles: Toggles,
    classes: Vec<usize>,
    entity_scores: Vec<f64>,
) -> Result<ScenePrediction, ModelError> {
    let pairs = scene.ordered_pairs();
    let pooled = pooled_rows(cache, pooled_scene, scene.num_entities(), &pairs);
    let input = SceneInput {
        scene,
        classes: classes.clone(),
        pairs: pairs.clone(),
        pooled,
    };
    let mut tape = Tape::with_params(&model.store);
    let out = model.forward(&mut tape, &[input], toggles, ForwardOptions::default())?;
    let logits = tape.value(out.logits);
    let k = model.config.predicates;
    let pairs = pairs
        .iter()
        .enumerate()
        .map(|(r, &(i, j))| {
            let w = entity_scores[i] * entity_scores[j];
            PairPrediction {
                subject: i,
                object: j,
                scores: softmax_row(&logits.data()[r * k..(r + 1) * k]).into_iter().map(|p| p * w).collect(),
            }
        })
        .collect();
    Ok(ScenePrediction {
        scene_id: scene.id,
        classes,
        entity_scores,
        pairs,
    })
}

/// Entity labels and confidences from the entity head.
pub fn predict_entities(model: &Model, scene: &SceneInstance) -> Result<(Vec<usize>, Vec<f64>), ModelError> {
    let n = scene.num_entities();
    let mut tape = Tape::with_params(&model.store);
    let visual = tape.constant(scene.entity_features.clone());
    let zeros = tape.constant(crate::tensor::Tensor::zeros(vec![n, model.config.lcm_dim]));
    let input = crate::lcm::fuse_entity(&mut tape, visual, zeros)?;
    let logits = model.entity_head.forward(&mut tape, input)?;
    let e = model.config.entity_classes;
    let mut classes = Vec::with_capacity(n);
    let mut scores = Vec::with_capacity(n);
    for row in tape.value(logits).data().chunks(e) {
        let p = softmax_row(row);
        let mut best = 0;
        for c in 1..e {
            if p[c] > p[best] {
                best = c;
            }
        }
        classes.push(best);
        scores.push(p[best]);
    }
    Ok((classes, scores))
}

/// Ranked predictions for one scene under `task`.
pub fn predict_scene(
    model: &Model,
    scene: &SceneInstance,
    pooled_scene: &[f64],
    cache: &FeatureCache,
    task: Task,
    toggles: Toggles,
) -> Result<ScenePrediction, ModelError> {
    let (classes, scores) = match task {
        Task::PredCls => (scene.classes(), vec![1.0; scene.num_entities()]),
        Task::SgCls => predict_entities(model, scene)?,
    };
    predict_with_labels(model, scene, pooled_scene, cache, toggles, classes, scores)
}

/// Metric record of a prediction against the scene's ground truth.
pub fn record_for(scene: &SceneInstance, prediction: &ScenePrediction) -> EvalRecord {
    let entity_ok = scene
        .entities
        .iter()
        .zip(&prediction.classes)
        .map(|(e, c)| e.class == *c)
        .collect();
    EvalRecord {
        scene_id: scene.id,
        gt: scene.gt_triplets.clone(),
        entity_ok,
        candidates: prediction.ranked(),
    }
}

/// FREQ-baseline record: every pair scored by its class pair's triplet counts.
pub fn freq_record(scene: &SceneInstance, tables: &MarginalTables) -> Result<EvalRecord, ModelError> {
    let mut candidates = Vec::new();
    for (i, j) in scene.ordered_pairs() {
        let f = freq_predict(tables, scene.entities[i].class, scene.entities[j].class)?;
        for (k, s) in f.distribution.values().iter().enumerate() {
            if k != BACKGROUND {
                candidates.push(Candidate {
                    subject: i,
                    object: j,
                    predicate: k,
                    score: *s,
                });
            }
        }
    }
    candidates.sort_by(crate::metrics::rank_order);
    Ok(EvalRecord {
        scene_id: scene.id,
        gt: scene.gt_triplets.clone(),
        entity_ok: Vec::new(),
        candidates,
    })
}

/// Estimator-only record: every pair scored by the softmax of the
/// estimator's raw scores for its ground-truth labels and boxes.
pub fn estimator_record(model: &Model, scene: &SceneInstance) -> Result<EvalRecord, ModelError> {
    let pairs = scene.ordered_pairs();
    let subjects: Vec<usize> = pairs.iter().map(|&(i, _)| scene.entities[i].class).collect();
    let objects: Vec<usize> = pairs.iter().map(|&(_, j)| scene.entities[j].class).collect();
    let positions: Vec<[f64; 8]> = pairs
        .iter()
        .map(|&(i, j)| pair_position(&scene.entities[i].bbox, &scene.entities[j].bbox))
        .collect();
    let mut tape = Tape::with_params(&model.store);
    let scores = model.eem.estimate(&mut tape, &subjects, &objects, &positions)?;
    let k = model.config.predicates;
    let mut candidates = Vec::new();
    for (r, &(i, j)) in pairs.iter().enumerate() {
        let p = softmax_row(&tape.value(scores).data()[r * k..(r + 1) * k]);
        for (kk, s) in p.iter().enumerate().skip(1) {
            candidates.push(Candidate {
                subject: i,
                object: j,
                predicate: kk,
                score: *s,
            });
        }
    }
    candidates.sort_by(crate::metrics::rank_order);
    Ok(EvalRecord {
        scene_id: scene.id,
        gt: scene.gt_triplets.clone(),
        entity_ok: Vec::new(),
        candidates,
    })
}
