//! End-to-end runs: training into a checkpoint, evaluation, the ablation
//! grid, the μ sweep and the diagnostic reports built on them.
//!
//! `workers` only ever splits independent work (scenes of an evaluation,
//! configurations of a grid), so results do not depend on it.

use std::collections::BTreeSet;

use crate::config::RunConfig;
use crate::error::ModelError;
use crate::io::Checkpoint;
use crate::metrics::{corpus_recall_at_k, mean_recall_at_k, topn_recall_at_k, EvalRecord};
use crate::model::{
    estimator_record, freq_record, predict_scene, record_for, train, FeatureCache, Model, Task, Toggles, TraceRecord,
};
use crate::synth::{compute_marginals, Dataset, MarginalTables, BACKGROUND};
use crate::tensor::Tape;

/// Runs `f` over `items` on up to `workers` threads, keeping input order.
pub fn parallel_map<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let workers = workers.clamp(1, items.len().max(1));
    if workers == 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(workers);
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| {
                let f = &f;
                s.spawn(move || part.iter().map(f).collect::<Vec<R>>())
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}

/// Marginal and FREQ tables of the training split under `config`.
pub fn marginals_for(config: &RunConfig, dataset: &Dataset) -> Result<MarginalTables, ModelError> {
    Ok(compute_marginals(
        &dataset.train,
        dataset.process.num_entities(),
        dataset.process.num_predicates(),
        config.train.smoothing,
    )?)
}

#[derive(Clone, Debug)]
pub struct TrainedRun {
    pub checkpoint: Checkpoint,
    pub trace: Vec<TraceRecord>,
}

/// Trains a fresh model under `config` and packages it as a checkpoint.
pub fn train_run(config: &RunConfig, dataset: &Dataset, cache: &FeatureCache) -> Result<TrainedRun, ModelError> {
    let marginals = marginals_for(config, dataset)?;
    let model = Model::new(config.model.clone())?;
    let out = train(dataset, cache, model, &config.train, &marginals)?;
    Ok(TrainedRun {
        checkpoint: Checkpoint {
            config: config.clone(),
            model: out.model,
            iteration: out.steps as u64,
            rng_seed: config.train.seed,
            rng_step: out.steps as u64,
        },
        trace: out.trace,
    })
}

/// Metric records of every evaluation scene.
pub fn evaluate(
    model: &Model,
    dataset: &Dataset,
    cache: &FeatureCache,
    task: Task,
    toggles: Toggles,
    workers: usize,
) -> Result<Vec<EvalRecord>, ModelError> {
    let idx: Vec<usize> = (0..dataset.eval.len()).collect();
    parallel_map(&idx, workers, |&i| {
        let scene = &dataset.eval[i];
        predict_scene(model, scene, &cache.eval[i], cache, task, toggles).map(|p| record_for(scene, &p))
    })
    .into_iter()
    .collect()
}

/// Records of the estimator alone, scored from labels and boxes.
pub fn estimator_records(model: &Model, dataset: &Dataset) -> Result<Vec<EvalRecord>, ModelError> {
    dataset.eval.iter().map(|s| estimator_record(model, s)).collect()
}

/// Records of the frequency baseline.
pub fn freq_records(dataset: &Dataset, marginals: &MarginalTables) -> Result<Vec<EvalRecord>, ModelError> {
    dataset.eval.iter().map(|s| freq_record(s, marginals)).collect()
}

/// R@K, mR@K and Top-N R@K of one set of records.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsTable {
    pub ks: Vec<usize>,
    pub ns: Vec<usize>,
    pub recall: Vec<f64>,
    pub mean_recall: Vec<f64>,
    /// `topn[n][k]` for `ns[n]`, `ks[k]`.
    pub topn: Vec<Vec<f64>>,
    /// Per-predicate recall at the largest K.
    pub per_class: Vec<Option<f64>>,
}

pub fn metrics_table(records: &[EvalRecord], predicates: usize, ks: &[usize], ns: &[usize]) -> MetricsTable {
    let recall = ks.iter().map(|&k| corpus_recall_at_k(records, k)).collect();
    let mean_recall = ks.iter().map(|&k| mean_recall_at_k(records, k, predicates).mean).collect();
    let topn = ns
        .iter()
        .map(|&n| ks.iter().map(|&k| topn_recall_at_k(records, n, k)).collect())
        .collect();
    let kmax = ks.iter().copied().max().unwrap_or(1);
    MetricsTable {
        ks: ks.to_vec(),
        ns: ns.to_vec(),
        recall,
        mean_recall,
        topn,
        per_class: mean_recall_at_k(records, kmax, predicates).per_class,
    }
}

/// One row of the structural ablation.
#[derive(Clone, Debug)]
pub struct AblationRow {
    pub toggles: Toggles,
    pub run: TrainedRun,
    pub metrics: MetricsTable,
}

/// Trains and evaluates `config` under each toggle set, `workers` runs at a time.
pub fn train_grid(
    config: &RunConfig,
    grid: &[Toggles],
    dataset: &Dataset,
    cache: &FeatureCache,
    ks: &[usize],
    ns: &[usize],
    workers: usize,
) -> Result<Vec<AblationRow>, ModelError> {
    let predicates = dataset.process.num_predicates();
    parallel_map(grid, workers, |&toggles| {
        let mut c = config.clone();
        c.train.toggles = toggles;
        let run = train_run(&c, dataset, cache)?;
        let records = evaluate(&run.checkpoint.model, dataset, cache, c.train.task, toggles, 1)?;
        Ok(AblationRow {
            toggles,
            metrics: metrics_table(&records, predicates, ks, ns),
            run,
        })
    })
    .into_iter()
    .collect()
}

/// One point of the μ sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub mu: f64,
    pub metrics: MetricsTable,
}

pub fn sweep_mu(
    config: &RunConfig,
    mus: &[f64],
    dataset: &Dataset,
    cache: &FeatureCache,
    ks: &[usize],
    workers: usize,
) -> Result<Vec<SweepPoint>, ModelError> {
    let predicates = dataset.process.num_predicates();
    parallel_map(mus, workers, |&mu| {
        let mut c = config.clone();
        c.train.mu = mu;
        let run = train_run(&c, dataset, cache)?;
        let records = evaluate(&run.checkpoint.model, dataset, cache, c.train.task, c.train.toggles, 1)?;
        Ok(SweepPoint {
            mu,
            metrics: metrics_table(&records, predicates, ks, &[1]),
        })
    })
    .into_iter()
    .collect()
}

/// Whether the frequency table and the smoothed marginals can say anything
/// about class pairs never annotated in training.
#[derive(Clone, Debug, PartialEq)]
pub struct ZeroShotCheck {
    /// Distinct (subject, object) class pairs of zero-shot eval triplets.
    pub pairs: Vec<(usize, usize)>,
    /// Pairs for which the frequency baseline is uninformative.
    pub freq_uninformative: usize,
    /// Pairs whose joint marginal entropy is under `bound`.
    pub joint_informative: usize,
    pub max_joint_entropy: f64,
    /// `ln K − 0.1`.
    pub bound: f64,
}

impl ZeroShotCheck {
    pub fn passed(&self) -> bool {
        !self.pairs.is_empty()
            && self.freq_uninformative == self.pairs.len()
            && self.joint_informative == self.pairs.len()
    }
}

pub fn zero_shot_check(dataset: &Dataset, marginals: &MarginalTables) -> Result<ZeroShotCheck, ModelError> {
    let pairs: BTreeSet<(usize, usize)> = dataset
        .zero_shot_triplets()
        .into_iter()
        .map(|(si, t)| {
            let s = &dataset.eval[si];
            (s.entities[t.subject].class, s.entities[t.object].class)
        })
        .collect();
    let bound = (marginals.predicates as f64).ln() - 0.1;
    let mut out = ZeroShotCheck {
        pairs: pairs.iter().copied().collect(),
        freq_uninformative: 0,
        joint_informative: 0,
        max_joint_entropy: 0.0,
        bound,
    };
    for &(s, o) in &pairs {
        let freq = crate::synth::freq_predict(marginals, s, o)?;
        out.freq_uninformative += !freq.informative as usize;
        let joint = crate::eem::joint_possibility(marginals.sub_row(s), marginals.obj_row(o))?;
        let h = joint.entropy();
        out.max_joint_entropy = out.max_joint_entropy.max(h);
        out.joint_informative += (h < bound) as usize;
    }
    Ok(out)
}

/// Trained attention on each predicate's own pattern channels against the
/// channels no predicate uses, measured on evaluation triplets.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelSelection {
    /// Per predicate: `(pattern mean, distractor mean, triplets)`; `None`
    /// for predicates absent from the split.
    pub per_predicate: Vec<Option<(f64, f64, usize)>>,
    pub pattern_mean: f64,
    pub distractor_mean: f64,
}

impl ChannelSelection {
    pub fn passed(&self) -> bool {
        self.pattern_mean > self.distractor_mean
    }

    /// Predicates whose own channels get more attention than the distractors.
    pub fn wins(&self) -> (usize, usize) {
        let present: Vec<_> = self.per_predicate.iter().flatten().collect();
        (present.iter().filter(|(p, d, _)| p > d).count(), present.len())
    }
}

pub fn channel_selection(model: &Model, dataset: &Dataset) -> Result<ChannelSelection, ModelError> {
    let process = &dataset.process;
    let distractors = process.distractor_channels();
    let k = process.num_predicates();
    let mut sums = vec![(0.0, 0.0, 0usize); k];
    for scene in &dataset.eval {
        for t in &scene.gt_triplets {
            let (cs, co) = (scene.entities[t.subject].class, scene.entities[t.object].class);
            let mut tape = Tape::with_params(&model.store);
            let a = model.lam.attention_for(&mut tape, cs, co)?;
            let a = tape.value(a).data();
            let mean_of = |ch: &[usize]| ch.iter().map(|c| a[*c]).sum::<f64>() / ch.len().max(1) as f64;
            let entry = &mut sums[t.predicate];
            entry.0 += mean_of(process.pattern_channels(t.predicate));
            entry.1 += mean_of(&distractors);
            entry.2 += 1;
        }
    }
    let per_predicate: Vec<Option<(f64, f64, usize)>> = sums
        .iter()
        .enumerate()
        .map(|(p, &(a, b, n))| (p != BACKGROUND && n > 0).then(|| (a / n as f64, b / n as f64, n)))
        .collect();
    let present: Vec<_> = per_predicate.iter().flatten().collect();
    let avg = |f: fn(&(f64, f64, usize)) -> f64| present.iter().map(|x| f(x)).sum::<f64>() / present.len().max(1) as f64;
    Ok(ChannelSelection {
        pattern_mean: avg(|x| x.0),
        distractor_mean: avg(|x| x.1),
        per_predicate,
    })
}

/// Per-class recall gain of one model over another against each class's
/// training frequency.
#[derive(Clone, Debug, PartialEq)]
pub struct FrequencyCorrelation {
    /// `(predicate, training triplets, recall delta)` for classes present in both.
    pub rows: Vec<(usize, usize, f64)>,
    /// Pearson correlation of delta against frequency.
    pub pcc: Option<f64>,
}

pub fn frequency_correlation(dataset: &Dataset, base: &MetricsTable, other: &MetricsTable) -> FrequencyCorrelation {
    let counts = dataset.predicate_counts(crate::synth::Split::Train);
    let rows: Vec<(usize, usize, f64)> = (1..counts.len())
        .filter_map(|p| match (base.per_class.get(p)?, other.per_class.get(p)?) {
            (Some(a), Some(b)) => Some((p, counts[p], b - a)),
            _ => None,
        })
        .collect();
    let x: Vec<f64> = rows.iter().map(|r| r.1 as f64).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.2).collect();
    FrequencyCorrelation {
        pcc: crate::metrics::pearson(&x, &y),
        rows,
    }
}
