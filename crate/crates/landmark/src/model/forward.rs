use std::collections::HashMap;

use super::{Model, Toggles};
use crate::eem::pair_position;
use crate::error::ModelError;
use crate::lcm::fuse_entity;
use crate::synth::SceneInstance;
use crate::tensor::{Tape, Tensor, Var};

/// One scene's contribution to a forward pass.
#[derive(Clone, Debug)]
pub struct SceneInput<'a> {
    pub scene: &'a SceneInstance,
    /// Labels the language modules read: ground truth or predicted.
    pub classes: Vec<usize>,
    /// Ordered entity pairs to score.
    pub pairs: Vec<(usize, usize)>,
    /// `[pairs.len() × C]` pooled relation features, row per pair.
    pub pooled: Vec<f64>,
}

/// Vars of a batched forward pass; rows follow the scenes' pair order.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// `[P, K]` baseline logits plus the estimator offset.
    pub logits: Var,
    /// `[P, K]` baseline logits alone.
    pub base_logits: Var,
    /// `[P, K]` raw estimator scores, when the estimator is on.
    pub eem_scores: Option<Var>,
    /// `[N, E]` entity logits, when requested.
    pub entity_logits: Option<Var>,
    /// `[P, C]` channel gates, when attention is on.
    pub attention: Option<Var>,
    /// First pair row of each scene, plus the total at the end.
    pub pair_offsets: Vec<usize>,
    /// First entity row of each scene, plus the total at the end.
    pub entity_offsets: Vec<usize>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ForwardOptions {
    /// Also run the entity head.
    pub entities: bool,
    /// Add the estimator offset as a constant, so the cross-entropy does not
    /// reach the estimator.
    pub detach_eem: bool,
}

impl Model {
    /// Pipeline order: context fuse, attention refine, baseline heads,
    /// estimator offset.
    pub fn forward(
        &self,
        tape: &mut Tape<'_>,
        inputs: &[SceneInput<'_>],
        toggles: Toggles,
        options: ForwardOptions,
    ) -> Result<ForwardOutput, ModelError> {
        let cfg = &self.config;
        let (v, d, c) = (cfg.visual_dim, cfg.lcm_dim, cfg.channels);
        let mut pair_offsets = vec![0];
        let mut entity_offsets = vec![0];
        let mut visual = Vec::new();
        let mut sub_rows = Vec::new();
        let mut obj_rows = Vec::new();
        let mut sub_classes = Vec::new();
        let mut obj_classes = Vec::new();
        let mut positions = Vec::new();
        let mut pooled = Vec::new();
        for input in inputs {
            let s = input.scene;
            let base = *entity_offsets.last().unwrap();
            if s.entity_features.shape() != [s.num_entities(), v] {
                return Err(ModelError::Config(format!(
                    "scene {} entity features have shape {:?}, expected [{}, {v}]",
                    s.id,
                    s.entity_features.shape(),
                    s.num_entities()
                )));
            }
            if input.classes.len() != s.num_entities() || input.pooled.len() != input.pairs.len() * c {
                return Err(ModelError::Config(format!("inconsistent forward input for scene {}", s.id)));
            }
            visual.extend_from_slice(s.entity_features.data());
            for &(i, j) in &input.pairs {
                sub_rows.push(base + i);
                obj_rows.push(base + j);
                sub_classes.push(input.classes[i]);
                obj_classes.push(input.classes[j]);
                positions.push(pair_position(&s.entities[i].bbox, &s.entities[j].bbox));
            }
            pooled.extend_from_slice(&input.pooled);
            entity_offsets.push(base + s.num_entities());
            pair_offsets.push(pair_offsets.last().unwrap() + input.pairs.len());
        }
        let n_total = *entity_offsets.last().unwrap();
        let p_total = *pair_offsets.last().unwrap();
        if p_total == 0 {
            return Err(ModelError::Config("forward pass needs at least one pair".into()));
        }
        let visual = tape.constant(Tensor::new(vec![n_total, v], visual)?);

        let context = if toggles.lcm {
            let mut parts = Vec::with_capacity(inputs.len());
            for input in inputs {
                let boxes: Vec<[f64; 4]> = input.scene.entities.iter().map(|e| e.bbox.as_array()).collect();
                parts.push(self.lcm.context(tape, &input.classes, &boxes)?);
            }
            tape.concat(&parts, 0)?
        } else {
            tape.constant(Tensor::zeros(vec![n_total, d]))
        };
        let enhanced = fuse_entity(tape, visual, context)?;
        let ns = tape.gather_rows(enhanced, &sub_rows)?;
        let no = tape.gather_rows(enhanced, &obj_rows)?;

        let pooled = tape.constant(Tensor::new(vec![p_total, c], pooled)?);
        let (relation, attention) = if toggles.lam {
            // one attention vector per distinct class pair, in order of first use
            let mut index: HashMap<(usize, usize), usize> = HashMap::new();
            let mut rows = Vec::new();
            let mut pick = Vec::with_capacity(p_total);
            for (&s, &o) in sub_classes.iter().zip(&obj_classes) {
                let next = index.len();
                let slot = *index.entry((s, o)).or_insert(next);
                if slot == rows.len() {
                    let a = self.lam.attention_for(tape, s, o)?;
                    rows.push(tape.reshape(a, vec![1, c])?);
                }
                pick.push(slot);
            }
            let table = tape.concat(&rows, 0)?;
            let gates = tape.gather_rows(table, &pick)?;
            (tape.mul(pooled, gates)?, Some(gates))
        } else {
            (pooled, None)
        };

        let rel_in = tape.concat(&[ns, no, relation], 1)?;
        let base_logits = self.relation_head.forward(tape, rel_in)?;
        let (logits, eem_scores) = if toggles.eem {
            let scores = self.eem.estimate(tape, &sub_classes, &obj_classes, &positions)?;
            let offset = if options.detach_eem {
                tape.constant(tape.value(scores).clone())
            } else {
                scores
            };
            (tape.add(base_logits, offset)?, Some(scores))
        } else {
            (base_logits, None)
        };

        let entity_logits = if options.entities {
            let zeros = tape.constant(Tensor::zeros(vec![n_total, d]));
            let input = fuse_entity(tape, visual, zeros)?;
            Some(self.entity_head.forward(tape, input)?)
        } else {
            None
        };

        Ok(ForwardOutput {
            logits,
            base_logits,
            eem_scores,
            entity_logits,
            attention,
            pair_offsets,
            entity_offsets,
        })
    }
}
