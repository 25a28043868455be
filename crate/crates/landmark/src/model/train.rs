use std::collections::HashMap;

use super::forward::ForwardOptions;
use super::{FeatureCache, Model, SceneInput, Task, Toggles};
use crate::eem::{distribution_label, joint_possibility};
use crate::error::ModelError;
use crate::rng::{derive_seed, SeedStream};
use crate::synth::{Dataset, MarginalTables, SceneInstance, BACKGROUND};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Scenes per step.
    pub batch_size: usize,
    pub iterations: usize,
    pub seed: u64,
    /// Share of the marginal prior in the estimator's target.
    pub mu: f64,
    /// Weight of the estimator's squared error in the total loss.
    pub lambda: f64,
    pub toggles: Toggles,
    pub task: Task,
    /// Background pairs sampled per annotated pair.
    pub background_ratio: usize,
    /// Let the cross-entropy reach the estimator, not only its own loss.
    pub eem_joint: bool,
    /// Compare the softmax of the estimator scores, not the raw scores, to the target.
    pub mse_on_softmax: bool,
    pub smoothing: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.05,
            batch_size: 16,
            iterations: 600,
            seed: 17,
            mu: 0.7,
            lambda: 30.0,
            toggles: Toggles::ALL,
            task: Task::PredCls,
            background_ratio: 3,
            eem_joint: true,
            mse_on_softmax: true,
            smoothing: 1e-3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(0.0..=1.0).contains(&self.mu) {
            return Err(ModelError::Config(format!("mu must lie in [0, 1], got {}", self.mu)));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(ModelError::Config("learning rate must be positive".into()));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(ModelError::Config("lambda must be finite and nonnegative".into()));
        }
        if self.batch_size == 0 {
            return Err(ModelError::Config("batch size must be positive".into()));
        }
        if !(self.smoothing >= 0.0) {
            return Err(ModelError::Config("smoothing must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Loss components of one step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRecord {
    pub step: usize,
    pub total: f64,
    pub cross_entropy: f64,
    /// Estimator squared error; recorded even when its weight is zero.
    pub mse: f64,
    pub entity_cross_entropy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub model: Model,
    pub trace: Vec<TraceRecord>,
    pub steps: usize,
}

/// Pairs of one training scene: every annotated pair, then sampled background.
pub(crate) fn training_pairs(scene: &SceneInstance, ratio: usize, rng: &mut SeedStream) -> (Vec<(usize, usize)>, Vec<usize>) {
    let mut pairs: Vec<(usize, usize)> = scene.gt_triplets.iter().map(|t| (t.subject, t.object)).collect();
    let mut targets: Vec<usize> = scene.gt_triplets.iter().map(|t| t.predicate).collect();
    let mut background: Vec<(usize, usize)> = scene
        .ordered_pairs()
        .into_iter()
        .filter(|&(i, j)| scene.predicate_of(i, j) == BACKGROUND)
        .collect();
    rng.shuffle(&mut background);
    let take = (ratio * pairs.len().max(1)).min(background.len());
    pairs.extend_from_slice(&background[..take]);
    targets.extend(std::iter::repeat_n(BACKGROUND, take));
    (pairs, targets)
}

pub(crate) fn pooled_rows(cache: &FeatureCache, pooled_scene: &[f64], n: usize, pairs: &[(usize, usize)]) -> Vec<f64> {
    pairs
        .iter()
        .flat_map(|&(i, j)| cache.pair(pooled_scene, n, i, j).iter().copied())
        .collect()
}

/// Distribution targets of the estimator, memoized per class pair.
pub(crate) struct LabelTable<'m> {
    marginals: &'m MarginalTables,
    joint: HashMap<(usize, usize), crate::dist::PredicateDistribution>,
}

impl<'m> LabelTable<'m> {
    pub(crate) fn new(marginals: &'m MarginalTables) -> Self {
        LabelTable {
            marginals,
            joint: HashMap::new(),
        }
    }

    pub(crate) fn label(&mut self, subject: usize, object: usize, predicate: usize, mu: f64) -> Result<Vec<f64>, ModelError> {
        let m = self.marginals;
        let joint = match self.joint.get(&(subject, object)) {
            Some(j) => j.clone(),
            None => {
                let j = joint_possibility(m.sub_row(subject), m.obj_row(object))?;
                self.joint.insert((subject, object), j.clone());
                j
            }
        };
        Ok(distribution_label(&joint, predicate, mu)?.into_values())
    }
}

/// Loss vars of one batch.
pub(crate) struct BatchLoss {
    pub total: Var,
    pub cross_entropy: Var,
    pub mse: Option<Var>,
    pub entity_cross_entropy: Option<Var>,
}

/// Builds the full training objective of a batch on `tape`.
pub(crate) fn batch_loss(
    model: &Model,
    tape: &mut Tape<'_>,
    inputs: &[SceneInput<'_>],
    targets: &[usize],
    labels: &mut LabelTable<'_>,
    config: &TrainConfig,
) -> Result<BatchLoss, ModelError> {
    let options = ForwardOptions {
        entities: config.task == Task::SgCls,
        detach_eem: !config.eem_joint,
    };
    let out = model.forward(tape, inputs, config.toggles, options)?;
    let ce = tape.cross_entropy(out.logits, targets)?;
    let mut total = ce;

    let mse = match out.eem_scores {
        Some(scores) => {
            let mut rows = Vec::new();
            let mut target = Vec::new();
            let mut row = 0;
            for input in inputs {
                for &(i, j) in &input.pairs {
                    let r = targets[row];
                    if r != BACKGROUND {
                        rows.push(row);
                        let (cs, co) = (input.scene.entities[i].class, input.scene.entities[j].class);
                        target.extend(labels.label(cs, co, r, config.mu)?);
                    }
                    row += 1;
                }
            }
            if rows.is_empty() {
                None
            } else {
                let view = if config.mse_on_softmax {
                    tape.softmax(scores, 1)?
                } else {
                    scores
                };
                let picked = tape.gather_rows(view, &rows)?;
                let k = model.config.predicates;
                let target = tape.constant(Tensor::new(vec![rows.len(), k], target)?);
                let mse = tape.mse(picked, target)?;
                if config.lambda > 0.0 {
                    let weighted = tape.scale(mse, config.lambda);
                    total = tape.add(total, weighted)?;
                }
                Some(mse)
            }
        }
        None => None,
    };

    let entity_cross_entropy = match out.entity_logits {
        Some(logits) => {
            let classes: Vec<usize> = inputs.iter().flat_map(|i| i.scene.classes()).collect();
            let ece = tape.cross_entropy(logits, &classes)?;
            total = tape.add(total, ece)?;
            Some(ece)
        }
        None => None,
    };

    Ok(BatchLoss {
        total,
        cross_entropy: ce,
        mse,
        entity_cross_entropy,
    })
}

/// Scene indices of batch `step`: consecutive slices of a per-epoch shuffle.
pub(crate) fn batch_indices(seed: u64, scenes: usize, batch: usize, step: usize) -> Vec<usize> {
    let order = SeedStream::new(seed).split("batches");
    let mut out = Vec::with_capacity(batch);
    let mut cursor = step * batch;
    while out.len() < batch {
        let epoch = cursor / scenes;
        let mut perm: Vec<usize> = (0..scenes).collect();
        order.split_index("epoch", epoch as u64).shuffle(&mut perm);
        let within = cursor % scenes;
        let take = (batch - out.len()).min(scenes - within);
        out.extend_from_slice(&perm[within..within + take]);
        cursor += take;
    }
    out
}

/// Plain SGD over `config.iterations` steps.
///
/// Only the parameters bound on the step's tape, i.e. those of enabled
/// modules, are updated. A non-finite loss aborts with its components.
pub fn train(
    dataset: &Dataset,
    cache: &FeatureCache,
    mut model: Model,
    config: &TrainConfig,
    marginals: &MarginalTables,
) -> Result<TrainOutcome, ModelError> {
    config.validate()?;
    if dataset.train.is_empty() {
        return Err(ModelError::Config("training split is empty".into()));
    }
    let mut labels = LabelTable::new(marginals);
    let mut trace = Vec::with_capacity(config.iterations);
    let pair_seed = derive_seed(config.seed, crate::rng::label("pairs"));
    for step in 0..config.iterations {
        let batch = batch_indices(config.seed, dataset.train.len(), config.batch_size, step);
        let mut inputs = Vec::with_capacity(batch.len());
        let mut targets = Vec::new();
        for (slot, &si) in batch.iter().enumerate() {
            let scene = &dataset.train[si];
            let mut rng = SeedStream::new(derive_seed(pair_seed, (step * config.batch_size + slot) as u64));
            let (pairs, t) = training_pairs(scene, config.background_ratio, &mut rng);
            let pooled = pooled_rows(cache, &cache.train[si], scene.num_entities(), &pairs);
            targets.extend(t);
            inputs.push(SceneInput {
                scene,
                classes: scene.classes(),
                pairs,
                pooled,
            });
        }
        let grads = {
            let mut tape = Tape::with_params(&model.store);
            let loss = batch_loss(&model, &mut tape, &inputs, &targets, &mut labels, config)?;
            let value = |v: Option<Var>, tape: &Tape<'_>| v.map_or(0.0, |v| tape.value(v).data()[0]);
            let record = TraceRecord {
                step,
                total: tape.value(loss.total).data()[0],
                cross_entropy: tape.value(loss.cross_entropy).data()[0],
                mse: value(loss.mse, &tape),
                entity_cross_entropy: value(loss.entity_cross_entropy, &tape),
            };
            if !record.total.is_finite() {
                return Err(ModelError::NonFinite {
                    step,
                    ce: record.cross_entropy,
                    mse: record.mse,
                });
            }
            trace.push(record);
            tape.backward(loss.total)?;
            tape.param_grads()
        };
        model.store.sgd_step(&grads, config.learning_rate);
    }
    Ok(TrainOutcome {
        model,
        trace,
        steps: config.iterations,
    })
}
