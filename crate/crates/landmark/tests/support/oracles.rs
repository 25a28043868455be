//! Brute-force reference implementations shared by the integration tests.
//!
//! Each one recomputes a library result the slow, obvious way: ranks by
//! counting better candidates, distributions by explicit loops.

#![allow(dead_code)]

use landmark::metrics::{Candidate, EvalRecord};
use landmark::rng::SeedStream;
use landmark::synth::Triplet;

/// `a` outranks `b`: higher score, then lower subject, object, predicate.
pub fn better(a: &Candidate, b: &Candidate) -> bool {
    if a.score != b.score {
        return a.score > b.score;
    }
    (a.subject, a.object, a.predicate) < (b.subject, b.object, b.predicate)
}

pub fn random_record(rng: &mut SeedStream, id: u64, vocab: usize) -> EvalRecord {
    let n = 2 + rng.below(5);
    let coarse = rng.bernoulli(0.5);
    let mut candidates = Vec::new();
    let mut gt = Vec::new();
    for s in 0..n {
        for o in 0..n {
            if s == o {
                continue;
            }
            if rng.bernoulli(0.85) {
                for p in 0..vocab {
                    // coarse scores force many ties
                    let score = if coarse { rng.below(4) as f64 / 4.0 } else { rng.uniform() };
                    candidates.push(Candidate {
                        subject: s,
                        object: o,
                        predicate: p,
                        score,
                    });
                }
            }
            if rng.bernoulli(0.3) {
                gt.push(Triplet {
                    subject: s,
                    object: o,
                    predicate: 1 + rng.below(vocab - 1),
                });
            }
        }
    }
    rng.shuffle(&mut candidates);
    let entity_ok = if rng.bernoulli(0.3) {
        (0..n).map(|_| rng.bernoulli(0.8)).collect()
    } else {
        Vec::new()
    };
    EvalRecord {
        scene_id: id,
        gt,
        entity_ok,
        candidates,
    }
}

pub fn label_ok(r: &EvalRecord, t: &Triplet) -> bool {
    r.entity_ok.is_empty() || (r.entity_ok[t.subject] && r.entity_ok[t.object])
}

/// Retained triplets under the graph constraint, by rank counting.
pub fn oracle_graph(r: &EvalRecord, k: usize) -> Vec<(usize, usize, usize)> {
    let fg: Vec<&Candidate> = r.candidates.iter().filter(|c| c.predicate != 0).collect();
    let tops: Vec<&Candidate> = fg
        .iter()
        .filter(|c| !fg.iter().any(|d| (d.subject, d.object) == (c.subject, c.object) && better(d, c)))
        .copied()
        .collect();
    tops.iter()
        .filter(|c| tops.iter().filter(|d| better(d, c)).count() < k)
        .map(|c| (c.subject, c.object, c.predicate))
        .collect()
}

/// Retained triplets of the Top-N pool, by rank counting.
pub fn oracle_topn(r: &EvalRecord, n: usize, k: usize) -> Vec<(usize, usize, usize)> {
    let fg: Vec<&Candidate> = r.candidates.iter().filter(|c| c.predicate != 0).collect();
    let pool: Vec<&Candidate> = fg
        .iter()
        .filter(|c| {
            fg.iter()
                .filter(|d| (d.subject, d.object) == (c.subject, c.object) && better(d, c))
                .count()
                < n
        })
        .copied()
        .collect();
    pool.iter()
        .filter(|c| pool.iter().filter(|d| better(d, c)).count() < n * k)
        .map(|c| (c.subject, c.object, c.predicate))
        .collect()
}

pub fn oracle_hits(r: &EvalRecord, kept: &[(usize, usize, usize)]) -> Vec<bool> {
    r.gt.iter()
        .map(|t| label_ok(r, t) && kept.contains(&(t.subject, t.object, t.predicate)))
        .collect()
}

pub fn fraction(h: &[bool]) -> f64 {
    h.iter().filter(|x| **x).count() as f64 / h.len() as f64
}

/// Per-class pooled recall under the graph constraint, and its macro mean.
pub fn oracle_mean_recall(records: &[EvalRecord], k: usize, vocab: usize) -> (Vec<Option<f64>>, f64) {
    let mut sums = vec![(0usize, 0usize); vocab];
    for r in records {
        let h = oracle_hits(r, &oracle_graph(r, k));
        for (t, ok) in r.gt.iter().zip(h) {
            sums[t.predicate].0 += ok as usize;
            sums[t.predicate].1 += 1;
        }
    }
    let per_class: Vec<Option<f64>> = sums
        .iter()
        .map(|(hit, total)| (*total > 0).then(|| *hit as f64 / *total as f64))
        .collect();
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    let mean = if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    (per_class, mean)
}

/// Nonnegative row with some exact zeros.
pub fn random_row(k: usize, rng: &mut SeedStream) -> Vec<f64> {
    (0..k).map(|_| if rng.bernoulli(0.2) { 0.0 } else { rng.uniform() }).collect()
}

/// Multiply, then normalize; uniform when the product vanishes.
pub fn oracle_joint(a: &[f64], b: &[f64]) -> Vec<f64> {
    let k = a.len();
    let mut prod = Vec::with_capacity(k);
    let mut total = 0.0;
    for i in 0..k {
        prod.push(a[i] * b[i]);
        total += a[i] * b[i];
    }
    (0..k)
        .map(|i| if total > 0.0 { prod[i] / total } else { 1.0 / k as f64 })
        .collect()
}

/// `mu` parts joint, the rest on the annotated predicate.
pub fn oracle_label(joint: &[f64], r: usize, mu: f64) -> Vec<f64> {
    (0..joint.len())
        .map(|i| mu * joint[i] + (1.0 - mu) * if i == r { 1.0 } else { 0.0 })
        .collect()
}

pub fn oracle_mse(d: &[f64], l: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..d.len() {
        acc += (d[i] - l[i]) * (d[i] - l[i]);
    }
    acc / d.len() as f64
}
