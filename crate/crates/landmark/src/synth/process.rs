use std::f64::consts::TAU;

use super::{SynthConfig, SynthError, Vocabulary, BACKGROUND};
use crate::rng::SeedStream;
use crate::tensor::Tensor;

/// The known generative process behind a synthetic dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct GenerativeProcess {
    pub config: SynthConfig,
    pub vocab: Vocabulary,
    /// `E × E × K` relative predicate weights for (subject, object) classes.
    pub pair_table: Vec<f64>,
    /// Preferred `(dx, dy)` of the object center relative to the subject
    /// center, per predicate. Background carries `(0, 0)`.
    pub spatial_rules: Vec<(f64, f64)>,
    /// Relation-feature channels each predicate activates. Background has none.
    pub pattern_channels: Vec<Vec<usize>>,
    /// `E × entity_dim` class prototypes for the visual entity features.
    pub prototypes: Tensor,
    /// Class pairs never annotated in the training split.
    pub zero_shot_pairs: Vec<(usize, usize)>,
    /// Zipf weight per predicate (background 0).
    pub zipf: Vec<f64>,
    /// `E × K` affinity of each class for each predicate as subject.
    pub sub_affinity: Vec<f64>,
    /// `E × K` affinity of each class for each predicate as object.
    pub obj_affinity: Vec<f64>,
}

impl GenerativeProcess {
    /// Channels 0..4 carry subject mask, object mask, dx and dy.
    pub const GEOMETRY_CHANNELS: usize = 4;

    pub fn build(config: &SynthConfig) -> Result<Self, SynthError> {
        config.validate()?;
        let root = SeedStream::new(config.seed).split("process");
        let e = config.entity_classes;
        let k = config.predicates;
        let f = k - 1;
        let vocab = Vocabulary::synthetic(e, k)?;

        // Each class owns a window of consecutive foreground predicates per
        // role. Window starts are spread evenly over 0..F so that with a zero
        // Zipf exponent every predicate is equally likely.
        let offsets = |name: &str| {
            let mut o: Vec<usize> = (0..e).map(|c| c % f).collect();
            root.split(name).shuffle(&mut o);
            o
        };
        let sub_off = offsets("subject-offsets");
        let obj_off = offsets("object-offsets");
        let m = config.predicates_per_class;
        let affinity = |off: usize, pred_fg: usize| -> f64 {
            let t = (pred_fg + f - off) % f;
            if t < m {
                0.8f64.powi(t as i32)
            } else {
                0.0
            }
        };
        let zipf: Vec<f64> = std::iter::once(0.0)
            .chain((0..f).map(|r| 1.0 / ((r + 1) as f64).powf(config.zipf_exponent)))
            .collect();
        let role_table = |off: &[usize]| -> Vec<f64> {
            (0..e)
                .flat_map(|i| std::iter::once(0.0).chain((0..f).map(move |p| affinity(off[i], p))))
                .collect()
        };
        let sub_affinity = role_table(&sub_off);
        let obj_affinity = role_table(&obj_off);
        let mut pair_table = vec![0.0; e * e * k];
        for i in 0..e {
            for j in 0..e {
                for p in 1..k {
                    pair_table[(i * e + j) * k + p] = zipf[p] * sub_affinity[i * k + p] * obj_affinity[j * k + p];
                }
            }
        }

        let spatial_rules = std::iter::once((0.0, 0.0))
            .chain((0..f).map(|p| {
                let angle = TAU * ((p * 3) % f) as f64 / f as f64;
                let radius = [0.12, 0.22, 0.3][p % 3];
                (radius * angle.cos(), radius * angle.sin())
            }))
            .collect();

        // Predicate p owns channels 2p and 2p+1; further channels are
        // borrowed from predicates half the window away, which never share
        // a class window, so the overlap is resolvable by class.
        let pool_base = Self::GEOMETRY_CHANNELS;
        let half = (f / 2).max(1);
        let pattern_channels = std::iter::once(Vec::new())
            .chain((0..f).map(|p| {
                let mut chans = Vec::new();
                for t in 0..config.channels_per_predicate {
                    let c = if t < 2 {
                        2 * p + t
                    } else {
                        let partner = (p + (t - 1) * half) % f;
                        2 * partner + (t % 2)
                    };
                    let c = pool_base + c % SynthConfig::pattern_pool(f, config.channels_per_predicate);
                    if !chans.contains(&c) {
                        chans.push(c);
                    }
                }
                chans
            }))
            .collect();

        let mut proto_rng = root.split("prototypes");
        let prototypes = Tensor::new(
            vec![e, config.entity_dim],
            (0..e * config.entity_dim).map(|_| proto_rng.normal()).collect(),
        )
        .expect("prototype shape");

        let mut process = GenerativeProcess {
            config: config.clone(),
            vocab,
            pair_table,
            spatial_rules,
            pattern_channels,
            prototypes,
            zero_shot_pairs: Vec::new(),
            zipf,
            sub_affinity,
            obj_affinity,
        };
        process.zero_shot_pairs = process.carve_zero_shot(&mut root.split("zero-shot"))?;
        Ok(process)
    }

    /// Holds out class pairs while every class keeps at least one
    /// supported partner in each role.
    fn carve_zero_shot(&self, rng: &mut SeedStream) -> Result<Vec<(usize, usize)>, SynthError> {
        let e = self.config.entity_classes;
        let mut supported: Vec<(usize, usize)> = (0..e)
            .flat_map(|i| (0..e).map(move |j| (i, j)))
            .filter(|&(i, j)| i != j && self.pair_weights(i, j).iter().any(|w| *w > 0.0))
            .collect();
        if supported.is_empty() {
            return Err(SynthError::Config("no class pair supports any predicate".into()));
        }
        let mut as_sub = vec![0usize; e];
        let mut as_obj = vec![0usize; e];
        for &(i, j) in &supported {
            as_sub[i] += 1;
            as_obj[j] += 1;
        }
        rng.shuffle(&mut supported);
        let mut held = Vec::new();
        for (i, j) in supported {
            if held.len() == self.config.zero_shot_pairs {
                break;
            }
            if as_sub[i] > 1 && as_obj[j] > 1 {
                as_sub[i] -= 1;
                as_obj[j] -= 1;
                held.push((i, j));
            }
        }
        if held.len() < self.config.zero_shot_pairs {
            return Err(SynthError::ZeroShotCarve {
                requested: self.config.zero_shot_pairs,
                available: held.len(),
            });
        }
        held.sort_unstable();
        Ok(held)
    }

    pub fn num_entities(&self) -> usize {
        self.config.entity_classes
    }

    pub fn num_predicates(&self) -> usize {
        self.config.predicates
    }

    /// Relative predicate weights for a (subject, object) class pair.
    pub fn pair_weights(&self, subject: usize, object: usize) -> &[f64] {
        let (e, k) = (self.config.entity_classes, self.config.predicates);
        &self.pair_table[(subject * e + object) * k..(subject * e + object + 1) * k]
    }

    /// Draws a relation linking a new entity to one of `existing`.
    ///
    /// The predicate is drawn from the global Zipf weights, then a parent
    /// is picked uniformly among existing entities whose class supports it
    /// in the drawn role, and finally the new entity's class is drawn in
    /// proportion to its affinity for the predicate in the other role.
    /// Held-out class pairs are excluded unless `allow_held_out`. Returns
    /// `(parent, new entity is object, predicate, new class)`, or `None`
    /// when no existing entity can carry the drawn predicate.
    pub fn sample_link(
        &self,
        existing: &[usize],
        allow_held_out: bool,
        rng: &mut SeedStream,
    ) -> Option<(usize, bool, usize, usize)> {
        let (e, k) = (self.config.entity_classes, self.config.predicates);
        let p = rng.weighted(&self.zipf)?;
        let new_is_object = rng.bernoulli(0.5);
        let (parent_aff, new_aff) = if new_is_object {
            (&self.sub_affinity, &self.obj_affinity)
        } else {
            (&self.obj_affinity, &self.sub_affinity)
        };
        let candidates: Vec<usize> = (0..existing.len())
            .filter(|&i| parent_aff[existing[i] * k + p] > 0.0)
            .collect();
        if candidates.is_empty() {
            return None;
        }
        let parent = candidates[rng.below(candidates.len())];
        let pc = existing[parent];
        let class_w: Vec<f64> = (0..e)
            .map(|c| {
                let (s, o) = if new_is_object { (pc, c) } else { (c, pc) };
                if allow_held_out || !self.is_zero_shot_pair(s, o) {
                    new_aff[c * k + p]
                } else {
                    0.0
                }
            })
            .collect();
        let c = rng.weighted(&class_w)?;
        Some((parent, new_is_object, p, c))
    }

    pub fn is_zero_shot_pair(&self, subject: usize, object: usize) -> bool {
        self.zero_shot_pairs.binary_search(&(subject, object)).is_ok()
    }

    pub fn pattern_channels(&self, predicate: usize) -> &[usize] {
        &self.pattern_channels[predicate]
    }

    /// Channels that carry only noise: neither geometry nor any predicate's pattern.
    pub fn distractor_channels(&self) -> Vec<usize> {
        (Self::GEOMETRY_CHANNELS..self.config.channels)
            .filter(|c| !self.pattern_channels.iter().any(|p| p.contains(c)))
            .collect()
    }

    /// Checks the structural invariants of the tables.
    pub fn validate(&self) -> Result<(), SynthError> {
        let (e, k) = (self.config.entity_classes, self.config.predicates);
        if self.pair_table.len() != e * e * k || self.pair_table.iter().any(|w| !(*w >= 0.0)) {
            return Err(SynthError::Config("pair table must be E×E×K and nonnegative".into()));
        }
        for p in 0..k {
            if p != BACKGROUND && self.pattern_channels[p].is_empty() {
                return Err(SynthError::Config(format!("predicate {p} has no pattern channel")));
            }
            if self.pattern_channels[p].iter().any(|c| *c >= self.config.channels) {
                return Err(SynthError::Config(format!("predicate {p} pattern channel out of range")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_process_is_valid() {
        let p = GenerativeProcess::build(&SynthConfig::default()).unwrap();
        p.validate().unwrap();
        assert_eq!(p.zero_shot_pairs.len(), 12);
        assert_eq!(p.pattern_channels(BACKGROUND).len(), 0);
        assert!(!p.distractor_channels().is_empty());
        for k in 1..p.num_predicates() {
            for c in p.pattern_channels(k) {
                assert!(!p.distractor_channels().contains(c));
            }
        }
    }

    #[test]
    fn impossible_zero_shot_carve_is_a_config_error() {
        let cfg = SynthConfig {
            entity_classes: 2,
            zero_shot_pairs: 50,
            ..SynthConfig::default()
        };
        match GenerativeProcess::build(&cfg) {
            Err(SynthError::ZeroShotCarve { requested: 50, .. }) | Err(SynthError::Config(_)) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn too_few_channels_rejected() {
        let cfg = SynthConfig {
            channels: 8,
            ..SynthConfig::default()
        };
        assert!(matches!(GenerativeProcess::build(&cfg), Err(SynthError::Config(_))));
    }
}
