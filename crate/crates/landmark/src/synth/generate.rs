use std::collections::HashSet;

use super::{BBox, Entity, GenerativeProcess, SceneInstance, Split, SynthConfig, SynthError, Triplet};
use crate::rng::{derive_seed, SeedStream};
use crate::tensor::Tensor;

/// Generated scenes plus the process that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub process: GenerativeProcess,
    pub train: Vec<SceneInstance>,
    pub eval: Vec<SceneInstance>,
}

/// Draws a full benchmark from `config`.
///
/// Training scenes never annotate a held-out class pair; evaluation scenes
/// may, which is what populates the zero-shot split.
pub fn generate_dataset(config: &SynthConfig) -> Result<Dataset, SynthError> {
    let process = GenerativeProcess::build(config)?;
    let root = SeedStream::new(config.seed);
    let train = (0..config.train_scenes)
        .map(|i| generate_scene(&process, Split::Train, i as u64, root.split_index("train", i as u64)))
        .collect();
    let eval = (0..config.eval_scenes)
        .map(|i| {
            generate_scene(
                &process,
                Split::Eval,
                (config.train_scenes + i) as u64,
                root.split_index("eval", i as u64),
            )
        })
        .collect();
    Ok(Dataset { process, train, eval })
}

fn random_box(rng: &mut SeedStream) -> BBox {
    let w = rng.range(0.08, 0.3);
    let h = rng.range(0.08, 0.3);
    BBox {
        cx: rng.range(w / 2.0, 1.0 - w / 2.0),
        cy: rng.range(h / 2.0, 1.0 - h / 2.0),
        w,
        h,
    }
}

fn place_near(anchor: &BBox, offset: (f64, f64), jitter: f64, rng: &mut SeedStream) -> BBox {
    let w = rng.range(0.08, 0.3);
    let h = rng.range(0.08, 0.3);
    let cx = anchor.cx + offset.0 + jitter * rng.normal();
    let cy = anchor.cy + offset.1 + jitter * rng.normal();
    BBox {
        cx: cx.clamp(w / 2.0, 1.0 - w / 2.0),
        cy: cy.clamp(h / 2.0, 1.0 - h / 2.0),
        w,
        h,
    }
}

fn generate_scene(process: &GenerativeProcess, split: Split, id: u64, mut rng: SeedStream) -> SceneInstance {
    let cfg = &process.config;
    let n = cfg.min_entities + rng.below(cfg.max_entities - cfg.min_entities + 1);
    let mut classes = vec![rng.below(cfg.entity_classes)];
    let mut boxes: Vec<BBox> = vec![random_box(&mut rng)];
    let mut triplets = Vec::new();
    for t in 1..n {
        let mut link = None;
        if rng.bernoulli(cfg.link_prob) {
            link = process.sample_link(&classes, split == Split::Eval, &mut rng);
        }
        match link {
            Some((parent, t_is_object, pred, class)) => {
                let (dx, dy) = process.spatial_rules[pred];
                let offset = if t_is_object { (dx, dy) } else { (-dx, -dy) };
                boxes.push(place_near(&boxes[parent], offset, cfg.spatial_jitter, &mut rng));
                classes.push(class);
                let (subject, object) = if t_is_object { (parent, t) } else { (t, parent) };
                triplets.push(Triplet {
                    subject,
                    object,
                    predicate: pred,
                });
            }
            None => {
                classes.push(rng.below(cfg.entity_classes));
                boxes.push(random_box(&mut rng));
            }
        }
    }
    let dim = cfg.entity_dim;
    let mut feats = Vec::with_capacity(n * dim);
    for &c in &classes {
        let proto = process.prototypes.row(c);
        feats.extend(proto.iter().map(|p| p + cfg.entity_noise * rng.normal()));
    }
    let feature_seed = derive_seed(rng.seed(), rng.next_u64());
    SceneInstance {
        id,
        split,
        entities: classes
            .into_iter()
            .zip(boxes)
            .map(|(class, bbox)| Entity { class, bbox })
            .collect(),
        gt_triplets: triplets,
        entity_features: Tensor::new(vec![n, dim], feats).expect("feature shape"),
        feature_seed,
    }
}

impl Dataset {
    pub fn scenes(&self, split: Split) -> &[SceneInstance] {
        match split {
            Split::Train => &self.train,
            Split::Eval => &self.eval,
        }
    }

    /// The `[C, S, S]` relation feature map of an ordered pair.
    ///
    /// Geometry channels encode both boxes; the annotated predicate's
    /// pattern channels are raised over the union region; every
    /// non-geometry channel carries a per-pair offset plus per-cell noise.
    pub fn relation_feature(&self, scene: &SceneInstance, subject: usize, object: usize) -> Tensor {
        relation_feature(&self.process, scene, subject, object)
    }

    /// Ground-truth predicate counts over one split, indexed by predicate.
    pub fn predicate_counts(&self, split: Split) -> Vec<usize> {
        let mut counts = vec![0; self.process.num_predicates()];
        for s in self.scenes(split) {
            for t in &s.gt_triplets {
                counts[t.predicate] += 1;
            }
        }
        counts
    }

    /// Evaluation triplets whose (subject class, object class) pair is
    /// never annotated in training, as `(eval scene index, triplet)`.
    pub fn zero_shot_triplets(&self) -> Vec<(usize, Triplet)> {
        let seen: HashSet<(usize, usize)> = self
            .train
            .iter()
            .flat_map(|s| {
                s.gt_triplets
                    .iter()
                    .map(move |t| (s.entities[t.subject].class, s.entities[t.object].class))
            })
            .collect();
        let mut out = Vec::new();
        for (si, s) in self.eval.iter().enumerate() {
            for t in &s.gt_triplets {
                let key = (s.entities[t.subject].class, s.entities[t.object].class);
                if !seen.contains(&key) {
                    out.push((si, *t));
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        self.process.validate()?;
        for s in self.train.iter().chain(&self.eval) {
            s.validate(&self.process.vocab)?;
        }
        Ok(())
    }
}

pub(crate) fn relation_feature(process: &GenerativeProcess, scene: &SceneInstance, subject: usize, object: usize) -> Tensor {
    let cfg = &process.config;
    let (c, s) = (cfg.channels, cfg.spatial);
    let area = s * s;
    let n = scene.entities.len();
    let mut rng = SeedStream::new(derive_seed(scene.feature_seed, (subject * n + object) as u64));
    let sb = scene.entities[subject].bbox;
    let ob = scene.entities[object].bbox;
    let mut data = vec![0.0; c * area];
    let cell = 1.0 / s as f64;
    let mut union = vec![0.0; area];
    for r in 0..s {
        for col in 0..s {
            let (x0, y0) = (col as f64 * cell, r as f64 * cell);
            let ms = sb.overlap(x0, x0 + cell, y0, y0 + cell) / (cell * cell);
            let mo = ob.overlap(x0, x0 + cell, y0, y0 + cell) / (cell * cell);
            let idx = r * s + col;
            data[idx] = ms;
            data[area + idx] = mo;
            data[2 * area + idx] = ob.cx - sb.cx;
            data[3 * area + idx] = ob.cy - sb.cy;
            union[idx] = ms.max(mo);
        }
    }
    let predicate = scene.predicate_of(subject, object);
    for &ch in process.pattern_channels(predicate) {
        for (v, u) in data[ch * area..(ch + 1) * area].iter_mut().zip(&union) {
            *v += cfg.pattern_amplitude * (0.5 + 0.5 * u);
        }
    }
    for ch in GenerativeProcess::GEOMETRY_CHANNELS..c {
        let offset = cfg.pair_noise * rng.normal();
        for v in &mut data[ch * area..(ch + 1) * area] {
            *v += offset + cfg.pixel_noise * rng.normal();
        }
    }
    Tensor::new(vec![c, s, s], data).expect("relation feature shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            train_scenes: 200,
            eval_scenes: 60,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn scenes_satisfy_invariants() {
        let d = generate_dataset(&small()).unwrap();
        d.validate().unwrap();
        assert_eq!(d.train.len(), 200);
        assert!(d.train.iter().all(|s| (3..=8).contains(&s.num_entities())));
    }

    #[test]
    fn relation_feature_is_deterministic_with_expected_shape() {
        let d = generate_dataset(&small()).unwrap();
        let s = &d.train[0];
        let a = d.relation_feature(s, 0, 1);
        let b = d.relation_feature(s, 0, 1);
        assert_eq!(a.shape(), &[32, 7, 7]);
        assert_eq!(a, b);
        assert_ne!(a, d.relation_feature(s, 1, 0));
    }

    #[test]
    fn train_never_annotates_held_out_pairs() {
        let d = generate_dataset(&small()).unwrap();
        for s in &d.train {
            for t in &s.gt_triplets {
                let (a, b) = (s.entities[t.subject].class, s.entities[t.object].class);
                assert!(!d.process.is_zero_shot_pair(a, b));
            }
        }
    }

    #[test]
    fn zero_train_scenes_rejected() {
        let cfg = SynthConfig {
            train_scenes: 0,
            ..small()
        };
        assert!(generate_dataset(&cfg).is_err());
    }
}
