use crate::synth::{Dataset, SceneInstance, Split};

/// Spatially pooled relation features of every ordered pair.
///
/// The relation head only ever sees the channel means of the gated map,
/// and gating a channel by a scalar commutes with averaging it, so the
/// full `[C, S, S]` maps are pooled once up front and gated afterwards.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureCache {
    pub channels: usize,
    pub train: Vec<Vec<f64>>,
    pub eval: Vec<Vec<f64>>,
}

impl FeatureCache {
    pub fn build(dataset: &Dataset) -> Self {
        let pool = |scenes: &[SceneInstance]| -> Vec<Vec<f64>> {
            scenes.iter().map(|s| pooled_scene(dataset, s)).collect()
        };
        FeatureCache {
            channels: dataset.process.config.channels,
            train: pool(&dataset.train),
            eval: pool(&dataset.eval),
        }
    }

    pub fn scenes(&self, split: Split) -> &[Vec<f64>] {
        match split {
            Split::Train => &self.train,
            Split::Eval => &self.eval,
        }
    }

    /// Pooled features of one scene, in the layout of [`FeatureCache::train`].
    pub fn pool_scene(dataset: &Dataset, scene: &SceneInstance) -> Vec<f64> {
        pooled_scene(dataset, scene)
    }

    /// Pooled feature of the ordered pair `(i, j)` in a scene of `n` entities.
    pub fn pair<'a>(&self, scene: &'a [f64], n: usize, i: usize, j: usize) -> &'a [f64] {
        let idx = pair_index(n, i, j);
        &scene[idx * self.channels..(idx + 1) * self.channels]
    }
}

/// Position of `(i, j)`, `i != j`, in row-major ordered-pair order.
pub(crate) fn pair_index(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i != j && i < n && j < n);
    i * (n - 1) + if j > i { j - 1 } else { j }
}

/// `[n(n−1) × C]` channel means, ordered like [`SceneInstance::ordered_pairs`].
pub(crate) fn pooled_scene(dataset: &Dataset, scene: &SceneInstance) -> Vec<f64> {
    let c = dataset.process.config.channels;
    let mut out = Vec::with_capacity(scene.num_entities() * scene.num_entities().saturating_sub(1) * c);
    for (i, j) in scene.ordered_pairs() {
        let f = dataset.relation_feature(scene, i, j);
        let area = f.len() / c;
        out.extend(f.data().chunks(area).map(|ch| ch.iter().sum::<f64>() / area as f64));
    }
    out
}
