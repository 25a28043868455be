//! Finite-difference audits of each language module and of the composed
//! model, shared by the command line and the test suites.

use crate::eem::{distribution_label, joint_possibility};
use crate::error::ModelError;
use crate::lam::refine_relation;
use crate::model::train::{batch_loss, pooled_rows, LabelTable};
use crate::model::{FeatureCache, Model, ModelConfig, SceneInput, Task, Toggles, TrainConfig};
use crate::rng::SeedStream;
use crate::synth::{compute_marginals, generate_dataset, SceneInstance, SynthConfig};
use crate::tensor::{finite_diff_check_store_sampled, GradReport, Tape, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct CheckOptions {
    pub h: f64,
    pub tol: f64,
    /// Entries probed per parameter block; `None` probes all of them.
    pub per_block: Option<usize>,
    pub seed: u64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions {
            h: 1e-5,
            tol: 1e-4,
            per_block: Some(16),
            seed: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModuleCheck {
    pub module: &'static str,
    pub report: GradReport,
}

impl ModuleCheck {
    pub fn passed(&self) -> bool {
        self.report.passed()
    }
}

fn random(shape: Vec<usize>, rng: &mut SeedStream) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.normal()).collect()).expect("length matches shape")
}

/// A small scene with at least one annotated pair, drawn from `synth`.
fn fixture(synth: &SynthConfig) -> Result<(crate::synth::Dataset, usize), ModelError> {
    let config = SynthConfig {
        train_scenes: 16,
        eval_scenes: 2,
        max_entities: synth.min_entities,
        ..synth.clone()
    };
    let data = generate_dataset(&config)?;
    let index = data
        .train
        .iter()
        .position(|s| !s.gt_triplets.is_empty())
        .ok_or_else(|| ModelError::Config("fixture generation produced no relations".into()))?;
    Ok((data, index))
}

/// Runs the four audits: attention, context, estimator, composed model.
///
/// Every loss is a squared error or the full training objective, so each
/// check covers exactly the parameters that objective reaches.
pub fn gradcheck_modules(
    model_config: &ModelConfig,
    synth: &SynthConfig,
    options: &CheckOptions,
) -> Result<Vec<ModuleCheck>, ModelError> {
    let model = Model::new(model_config.clone())?;
    let (data, index) = fixture(synth)?;
    let scene: &SceneInstance = &data.train[index];
    let mut rng = SeedStream::new(options.seed);
    let run = |ids: &[crate::tensor::ParamId], f: &dyn Fn(&mut Tape<'_>) -> Result<crate::tensor::Var, ModelError>| {
        finite_diff_check_store_sampled(&model.store, ids, f, options.h, options.tol, options.per_block)
    };
    let mut out = Vec::new();

    let cfg = &model.config;
    let s = synth.spatial;
    let feature = random(vec![cfg.channels, s, s], &mut rng);
    let target = random(vec![cfg.channels, s, s], &mut rng);
    let (cs, co) = (scene.entities[0].class, scene.entities[1].class);
    let report = run(&model.lam.params(), &|tape| {
        let a = model.lam.attention_for(tape, cs, co)?;
        let f = tape.constant(feature.clone());
        let r = refine_relation(tape, f, a)?;
        let t = tape.constant(target.clone());
        Ok(tape.mse(r, t)?)
    })?;
    out.push(ModuleCheck { module: "lam", report });

    let classes = scene.classes();
    let boxes: Vec<[f64; 4]> = scene.entities.iter().map(|e| e.bbox.as_array()).collect();
    let target = random(vec![classes.len(), cfg.lcm_dim], &mut rng);
    let report = run(&model.lcm.params(), &|tape| {
        let x = model.lcm.context(tape, &classes, &boxes)?;
        let t = tape.constant(target.clone());
        Ok(tape.mse(x, t)?)
    })?;
    out.push(ModuleCheck { module: "lcm", report });

    let marginals = compute_marginals(&data.train, cfg.entity_classes, cfg.predicates, 1e-3)?;
    let pairs = scene.ordered_pairs();
    let subjects: Vec<usize> = pairs.iter().map(|&(i, _)| classes[i]).collect();
    let objects: Vec<usize> = pairs.iter().map(|&(_, j)| classes[j]).collect();
    let positions: Vec<[f64; 8]> = pairs
        .iter()
        .map(|&(i, j)| crate::eem::pair_position(&scene.entities[i].bbox, &scene.entities[j].bbox))
        .collect();
    let mut labels = Vec::new();
    for (k, &(i, j)) in pairs.iter().enumerate() {
        let joint = joint_possibility(marginals.sub_row(subjects[k]), marginals.obj_row(objects[k]))?;
        labels.extend(distribution_label(&joint, scene.predicate_of(i, j), 0.7)?.into_values());
    }
    let labels = Tensor::new(vec![pairs.len(), cfg.predicates], labels)?;
    let report = run(&model.eem.params(), &|tape| {
        let d = model.eem.estimate(tape, &subjects, &objects, &positions)?;
        let p = tape.softmax(d, 1)?;
        let t = tape.constant(labels.clone());
        Ok(tape.mse(p, t)?)
    })?;
    out.push(ModuleCheck { module: "eem", report });

    let pooled_scene = FeatureCache::pool_scene(&data, scene);
    let cache = FeatureCache {
        channels: cfg.channels,
        train: Vec::new(),
        eval: Vec::new(),
    };
    let pooled = pooled_rows(&cache, &pooled_scene, scene.num_entities(), &pairs);
    let targets: Vec<usize> = pairs.iter().map(|&(i, j)| scene.predicate_of(i, j)).collect();
    let train_config = TrainConfig {
        toggles: Toggles::ALL,
        task: Task::SgCls,
        lambda: 1.0,
        ..TrainConfig::default()
    };
    let all: Vec<_> = model.store.ids().collect();
    let report = run(&all, &|tape| {
        let input = SceneInput {
            scene,
            classes: classes.clone(),
            pairs: pairs.clone(),
            pooled: pooled.clone(),
        };
        let mut table = LabelTable::new(&marginals);
        Ok(batch_loss(&model, tape, &[input], &targets, &mut table, &train_config)?.total)
    })?;
    out.push(ModuleCheck { module: "full", report });
    Ok(out)
}
