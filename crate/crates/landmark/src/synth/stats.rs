use super::{SceneInstance, SynthError};
use crate::dist::PredicateDistribution;

/// Annotation statistics of a training split.
#[derive(Clone, Debug, PartialEq)]
pub struct MarginalTables {
    pub entity_classes: usize,
    pub predicates: usize,
    pub smoothing: f64,
    /// `E × K` row-stochastic "subject-predicate" marginals.
    pub m_sub: Vec<f64>,
    /// `E × K` row-stochastic "predicate-object" marginals.
    pub m_obj: Vec<f64>,
    /// `E × E × K` raw triplet counts.
    pub freq_counts: Vec<u64>,
}

impl MarginalTables {
    pub fn sub_row(&self, class: usize) -> &[f64] {
        &self.m_sub[class * self.predicates..(class + 1) * self.predicates]
    }

    pub fn obj_row(&self, class: usize) -> &[f64] {
        &self.m_obj[class * self.predicates..(class + 1) * self.predicates]
    }

    pub fn freq_cell(&self, subject: usize, object: usize) -> &[u64] {
        let base = (subject * self.entity_classes + object) * self.predicates;
        &self.freq_counts[base..base + self.predicates]
    }
}

/// Counts triplet occurrences (one count per annotated triplet) and
/// derives row-normalized marginals with additive smoothing.
pub fn compute_marginals(
    train: &[SceneInstance],
    entity_classes: usize,
    predicates: usize,
    smoothing_eps: f64,
) -> Result<MarginalTables, SynthError> {
    if train.is_empty() {
        return Err(SynthError::Config("marginals need a non-empty training split".into()));
    }
    if !(smoothing_eps >= 0.0) {
        return Err(SynthError::Config("smoothing must be nonnegative".into()));
    }
    let (e, k) = (entity_classes, predicates);
    let mut freq_counts = vec![0u64; e * e * k];
    let mut sub_counts = vec![0.0; e * k];
    let mut obj_counts = vec![0.0; e * k];
    for scene in train {
        for t in &scene.gt_triplets {
            let cs = scene.entities[t.subject].class;
            let co = scene.entities[t.object].class;
            for c in [cs, co] {
                if c >= e {
                    return Err(SynthError::Vocabulary { index: c, len: e });
                }
            }
            if t.predicate >= k {
                return Err(SynthError::Vocabulary { index: t.predicate, len: k });
            }
            freq_counts[(cs * e + co) * k + t.predicate] += 1;
            sub_counts[cs * k + t.predicate] += 1.0;
            obj_counts[co * k + t.predicate] += 1.0;
        }
    }
    let normalize = |counts: Vec<f64>| -> Vec<f64> {
        counts
            .chunks(k)
            .flat_map(|row| PredicateDistribution::normalized(row.iter().map(|c| c + smoothing_eps).collect()).into_values())
            .collect()
    };
    Ok(MarginalTables {
        entity_classes: e,
        predicates: k,
        smoothing: smoothing_eps,
        m_sub: normalize(sub_counts),
        m_obj: normalize(obj_counts),
        freq_counts,
    })
}

/// A FREQ-baseline prediction for one class pair.
#[derive(Clone, Debug, PartialEq)]
pub struct FreqPrediction {
    pub distribution: PredicateDistribution,
    /// False when the pair never occurs in training and the distribution is
    /// the uniform fallback.
    pub informative: bool,
}

/// Normalized triplet counts of the `(subject, object)` cell.
pub fn freq_predict(tables: &MarginalTables, subject: usize, object: usize) -> Result<FreqPrediction, SynthError> {
    for c in [subject, object] {
        if c >= tables.entity_classes {
            return Err(SynthError::Vocabulary {
                index: c,
                len: tables.entity_classes,
            });
        }
    }
    let cell = tables.freq_cell(subject, object);
    let informative = cell.iter().any(|c| *c > 0);
    Ok(FreqPrediction {
        distribution: PredicateDistribution::normalized(cell.iter().map(|c| *c as f64).collect()),
        informative,
    })
}
