//! Synthetic long-tail scene-graph benchmark.
//!
//! Scenes are drawn from a [`GenerativeProcess`] whose regularities are
//! known: predicates depend on the subject/object classes through a
//! product-of-affinities table skewed by a Zipf law, on relative position
//! through per-predicate spatial signatures, and they leave a trace in a
//! fixed subset of relation-feature channels. Entity features are noisy
//! class prototypes.

mod generate;
mod process;
mod stats;

pub use generate::{generate_dataset, Dataset};
pub use process::GenerativeProcess;
pub use stats::{compute_marginals, freq_predict, FreqPrediction, MarginalTables};

use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid synthetic configuration: {0}")]
    Config(String),
    #[error("cannot carve {requested} zero-shot class pairs: only {available} can be held out")]
    ZeroShotCarve { requested: usize, available: usize },
    #[error("class index {index} outside vocabulary of {len}")]
    Vocabulary { index: usize, len: usize },
}

/// Entity and predicate names. Predicate 0 is the background class.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    pub entity_classes: Vec<String>,
    pub predicate_classes: Vec<String>,
}

pub const BACKGROUND: usize = 0;

impl Vocabulary {
    pub fn new(entity_classes: Vec<String>, predicate_classes: Vec<String>) -> Result<Self, SynthError> {
        if entity_classes.len() < 2 || predicate_classes.len() < 2 {
            return Err(SynthError::Config(
                "need at least 2 entity classes and 2 predicate classes".into(),
            ));
        }
        for names in [&entity_classes, &predicate_classes] {
            let mut sorted = names.clone();
            sorted.sort();
            sorted.dedup();
            if sorted.len() != names.len() {
                return Err(SynthError::Config("vocabulary names must be unique".into()));
            }
        }
        Ok(Vocabulary {
            entity_classes,
            predicate_classes,
        })
    }

    /// `entity_NN` / `predicate_NN` names, predicate 0 being `__background__`.
    pub fn synthetic(entities: usize, predicates: usize) -> Result<Self, SynthError> {
        let e = (0..entities).map(|i| format!("entity_{i:02}")).collect();
        let p = std::iter::once("__background__".to_string())
            .chain((1..predicates).map(|i| format!("predicate_{i:02}")))
            .collect();
        Self::new(e, p)
    }

    pub fn num_entities(&self) -> usize {
        self.entity_classes.len()
    }

    pub fn num_predicates(&self) -> usize {
        self.predicate_classes.len()
    }
}

/// Axis-aligned box given by center, width and height, all in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn as_array(&self) -> [f64; 4] {
        [self.cx, self.cy, self.w, self.h]
    }

    pub fn in_unit_square(&self) -> bool {
        self.w > 0.0
            && self.h > 0.0
            && self.cx - self.w / 2.0 >= -1e-12
            && self.cx + self.w / 2.0 <= 1.0 + 1e-12
            && self.cy - self.h / 2.0 >= -1e-12
            && self.cy + self.h / 2.0 <= 1.0 + 1e-12
    }

    /// Area of the overlap with the rectangle `[x0, x1] × [y0, y1]`.
    pub fn overlap(&self, x0: f64, x1: f64, y0: f64, y1: f64) -> f64 {
        let ox = (self.cx + self.w / 2.0).min(x1) - (self.cx - self.w / 2.0).max(x0);
        let oy = (self.cy + self.h / 2.0).min(y1) - (self.cy - self.h / 2.0).max(y0);
        ox.max(0.0) * oy.max(0.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Entity {
    pub class: usize,
    pub bbox: BBox,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triplet {
    pub subject: usize,
    pub object: usize,
    pub predicate: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Eval,
}

/// One image analog.
///
/// Relation features are not stored: they are a pure function of the
/// boxes, the annotated predicate and `feature_seed`, materialized on
/// demand by [`Dataset::relation_feature`].
#[derive(Clone, Debug, PartialEq)]
pub struct SceneInstance {
    pub id: u64,
    pub split: Split,
    pub entities: Vec<Entity>,
    pub gt_triplets: Vec<Triplet>,
    /// `[n, entity_dim]` visual entity features.
    pub entity_features: Tensor,
    pub feature_seed: u64,
}

impl SceneInstance {
    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    /// Annotated predicate of the ordered pair, background if none.
    pub fn predicate_of(&self, subject: usize, object: usize) -> usize {
        self.gt_triplets
            .iter()
            .find(|t| t.subject == subject && t.object == object)
            .map_or(BACKGROUND, |t| t.predicate)
    }

    /// All ordered pairs `(i, j)` with `i != j`, row-major.
    pub fn ordered_pairs(&self) -> Vec<(usize, usize)> {
        let n = self.entities.len();
        (0..n)
            .flat_map(|i| (0..n).filter(move |j| *j != i).map(move |j| (i, j)))
            .collect()
    }

    pub fn classes(&self) -> Vec<usize> {
        self.entities.iter().map(|e| e.class).collect()
    }

    /// Checks the structural invariants of a scene.
    pub fn validate(&self, vocab: &Vocabulary) -> Result<(), SynthError> {
        for e in &self.entities {
            if e.class >= vocab.num_entities() {
                return Err(SynthError::Vocabulary {
                    index: e.class,
                    len: vocab.num_entities(),
                });
            }
            if !e.bbox.in_unit_square() {
                return Err(SynthError::Config(format!("box {:?} leaves the unit square", e.bbox)));
            }
        }
        let n = self.entities.len();
        let mut seen = std::collections::HashSet::new();
        for t in &self.gt_triplets {
            if t.subject >= n || t.object >= n || t.subject == t.object {
                return Err(SynthError::Config(format!("bad triplet {t:?} in scene {}", self.id)));
            }
            if t.predicate == BACKGROUND || t.predicate >= vocab.num_predicates() {
                return Err(SynthError::Config(format!("bad predicate in {t:?}")));
            }
            if !seen.insert((t.subject, t.object)) {
                return Err(SynthError::Config(format!(
                    "pair ({}, {}) annotated twice in scene {}",
                    t.subject, t.object, self.id
                )));
            }
        }
        Ok(())
    }
}

/// Knobs of the synthetic benchmark.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub entity_classes: usize,
    pub predicates: usize,
    pub channels: usize,
    pub spatial: usize,
    pub entity_dim: usize,
    pub train_scenes: usize,
    pub eval_scenes: usize,
    pub min_entities: usize,
    pub max_entities: usize,
    pub zipf_exponent: f64,
    /// Predicates each class can take as subject (and, separately, as object).
    pub predicates_per_class: usize,
    pub channels_per_predicate: usize,
    pub pattern_amplitude: f64,
    pub pixel_noise: f64,
    pub pair_noise: f64,
    pub entity_noise: f64,
    pub link_prob: f64,
    pub spatial_jitter: f64,
    pub zero_shot_pairs: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            entity_classes: 20,
            predicates: 11,
            channels: 32,
            spatial: 7,
            entity_dim: 32,
            train_scenes: 2000,
            eval_scenes: 400,
            min_entities: 3,
            max_entities: 8,
            zipf_exponent: 1.2,
            predicates_per_class: 4,
            channels_per_predicate: 3,
            pattern_amplitude: 1.0,
            pixel_noise: 0.5,
            pair_noise: 0.6,
            entity_noise: 1.0,
            link_prob: 1.0,
            spatial_jitter: 0.05,
            zero_shot_pairs: 12,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let fail = |m: &str| Err(SynthError::Config(m.to_string()));
        if self.entity_classes < 2 || self.predicates < 2 {
            return fail("need at least 2 entity classes and 2 predicates");
        }
        if self.min_entities < 2 || self.max_entities < self.min_entities {
            return fail("entity range must satisfy 2 <= min <= max");
        }
        if self.train_scenes == 0 {
            return fail("n_scenes must be positive");
        }
        if self.spatial == 0 || self.entity_dim == 0 {
            return fail("spatial extent and entity_dim must be positive");
        }
        if self.zipf_exponent < 0.0 || !self.zipf_exponent.is_finite() {
            return fail("zipf_exponent must be finite and nonnegative");
        }
        let foreground = self.predicates - 1;
        if self.predicates_per_class == 0 || self.predicates_per_class > foreground {
            return fail("predicates_per_class must lie in 1..=predicates-1");
        }
        if self.channels_per_predicate == 0 {
            return fail("every predicate needs at least one pattern channel");
        }
        let needed = GenerativeProcess::GEOMETRY_CHANNELS + Self::pattern_pool(foreground, self.channels_per_predicate) + 1;
        if self.channels < needed {
            return Err(SynthError::Config(format!(
                "{} channels cannot hold geometry, pattern and distractor channels (need {needed})",
                self.channels
            )));
        }
        if !(0.0..=1.0).contains(&self.link_prob) {
            return fail("link_prob must lie in [0, 1]");
        }
        Ok(())
    }

    pub(crate) fn pattern_pool(foreground: usize, per_predicate: usize) -> usize {
        (2 * foreground).max(per_predicate)
    }
}
