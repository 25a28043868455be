//! Recall@K, mean Recall@K and Top-N Recall@K over ranked triplet predictions.
//!
//! Candidates are ranked by descending score; ties fall back to the lower
//! subject index, then the lower object index, then the lower predicate
//! index, so every metric is a deterministic function of its inputs.

use std::cmp::Ordering;
use std::collections::HashSet;

use crate::synth::{Triplet, BACKGROUND};

/// One scored `(subject, object, predicate)` hypothesis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Candidate {
    pub subject: usize,
    pub object: usize,
    pub predicate: usize,
    pub score: f64,
}

/// Ground truth and predictions of one scene.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRecord {
    pub scene_id: u64,
    pub gt: Vec<Triplet>,
    /// Whether each entity's label is right; empty means all are (PredCls).
    /// A triplet whose subject or object label is wrong never matches.
    pub entity_ok: Vec<bool>,
    pub candidates: Vec<Candidate>,
}

impl EvalRecord {
    /// Checks that scores are finite and indices reference entities.
    pub fn validate(&self, entities: usize) -> Result<(), String> {
        for c in &self.candidates {
            if !c.score.is_finite() {
                return Err(format!("non-finite score in scene {}", self.scene_id));
            }
            if c.subject >= entities || c.object >= entities || c.subject == c.object {
                return Err(format!("candidate {c:?} references no valid pair"));
            }
        }
        Ok(())
    }

    fn labels_ok(&self, t: &Triplet) -> bool {
        self.entity_ok.is_empty() || (self.entity_ok[t.subject] && self.entity_ok[t.object])
    }
}

/// Total order used for ranking: better candidates compare as `Less`.
pub fn rank_order(a: &Candidate, b: &Candidate) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.subject.cmp(&b.subject))
        .then(a.object.cmp(&b.object))
        .then(a.predicate.cmp(&b.predicate))
}

fn hits(record: &EvalRecord, kept: &HashSet<(usize, usize, usize)>) -> Vec<bool> {
    record
        .gt
        .iter()
        .map(|t| record.labels_ok(t) && kept.contains(&(t.subject, t.object, t.predicate)))
        .collect()
}

/// Graph-constrained retained set: each pair contributes its best
/// foreground predicate, pairs are ranked by that score, top `k` kept.
fn graph_constrained(record: &EvalRecord, k: usize) -> HashSet<(usize, usize, usize)> {
    let mut best: Vec<Candidate> = Vec::new();
    let mut sorted: Vec<&Candidate> = record.candidates.iter().filter(|c| c.predicate != BACKGROUND).collect();
    sorted.sort_by(|a, b| (a.subject, a.object).cmp(&(b.subject, b.object)));
    for c in sorted {
        match best.last_mut() {
            Some(last) if (last.subject, last.object) == (c.subject, c.object) => {
                if c.score > last.score || (c.score == last.score && c.predicate < last.predicate) {
                    *last = *c;
                }
            }
            _ => best.push(*c),
        }
    }
    best.sort_by(rank_order);
    best.iter().take(k).map(|c| (c.subject, c.object, c.predicate)).collect()
}

/// Top-N retained set: each pair keeps its `n` best predicates, the pooled
/// candidates are ranked and the top `n·k` kept.
fn top_n_pool(record: &EvalRecord, n: usize, k: usize) -> HashSet<(usize, usize, usize)> {
    let mut pool: Vec<Candidate> = Vec::new();
    let mut fg: Vec<Candidate> = record.candidates.iter().copied().filter(|c| c.predicate != BACKGROUND).collect();
    fg.sort_by(|a, b| (a.subject, a.object).cmp(&(b.subject, b.object)).then(rank_order(a, b)));
    let mut run = 0;
    for (i, c) in fg.iter().enumerate() {
        if i > 0 && (fg[i - 1].subject, fg[i - 1].object) == (c.subject, c.object) {
            run += 1;
        } else {
            run = 0;
        }
        if run < n {
            pool.push(*c);
        }
    }
    pool.sort_by(rank_order);
    pool.iter().take(n * k).map(|c| (c.subject, c.object, c.predicate)).collect()
}

/// Fraction of one record's ground truth found in the top `k`; `None`
/// when the record has no ground truth.
pub fn recall_at_k(record: &EvalRecord, k: usize) -> Option<f64> {
    assert!(k > 0, "K must be positive");
    if record.gt.is_empty() {
        return None;
    }
    let h = hits(record, &graph_constrained(record, k));
    Some(h.iter().filter(|x| **x).count() as f64 / h.len() as f64)
}

/// Corpus Recall@K: mean over records with ground truth.
pub fn corpus_recall_at_k(records: &[EvalRecord], k: usize) -> f64 {
    mean(records.iter().filter_map(|r| recall_at_k(r, k)))
}

/// Per-predicate-class recall and its macro mean.
#[derive(Clone, Debug, PartialEq)]
pub struct MeanRecall {
    /// Indexed by predicate; `None` for classes without ground truth.
    pub per_class: Vec<Option<f64>>,
    pub mean: f64,
}

/// Recall of each predicate class pooled over the corpus, macro-averaged
/// over the classes that occur.
pub fn mean_recall_at_k(records: &[EvalRecord], k: usize, predicates: usize) -> MeanRecall {
    assert!(k > 0, "K must be positive");
    let mut hit = vec![0usize; predicates];
    let mut total = vec![0usize; predicates];
    for r in records {
        let h = hits(r, &graph_constrained(r, k));
        for (t, ok) in r.gt.iter().zip(h) {
            total[t.predicate] += 1;
            hit[t.predicate] += ok as usize;
        }
    }
    let per_class: Vec<Option<f64>> = hit
        .iter()
        .zip(&total)
        .map(|(h, t)| (*t > 0).then(|| *h as f64 / *t as f64))
        .collect();
    MeanRecall {
        mean: mean(per_class.iter().flatten().copied()),
        per_class,
    }
}

/// Top-N Recall@K of one record; `None` without ground truth.
pub fn topn_recall_at_k_record(record: &EvalRecord, n: usize, k: usize) -> Option<f64> {
    assert!(n > 0 && k > 0, "N and K must be positive");
    if record.gt.is_empty() {
        return None;
    }
    let h = hits(record, &top_n_pool(record, n, k));
    Some(h.iter().filter(|x| **x).count() as f64 / h.len() as f64)
}

/// Corpus Top-N Recall@K: mean over records with ground truth.
pub fn topn_recall_at_k(records: &[EvalRecord], n: usize, k: usize) -> f64 {
    mean(records.iter().filter_map(|r| topn_recall_at_k_record(r, n, k)))
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (s, c) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    if c == 0 {
        0.0
    } else {
        s / c as f64
    }
}

/// Pearson correlation of two equal-length samples; `None` when either is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}
