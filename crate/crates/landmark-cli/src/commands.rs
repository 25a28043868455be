use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use landmark::check::{gradcheck_modules, CheckOptions};
use landmark::config::RunConfig;
use landmark::experiment::{
    estimator_records, evaluate, freq_records, frequency_correlation, marginals_for, metrics_table, sweep_mu as run_sweep,
    train_grid, train_run, zero_shot_check,
};
use landmark::io::{self, Checkpoint};
use landmark::model::{FeatureCache, Toggles};
use landmark::synth::{generate_dataset, Dataset};

use crate::report::{config_comment, fixed, recall_table, records, topn_table};
use crate::{CommonArgs, GradCheckFailed};

fn require_out(args: &CommonArgs) -> Result<&Path> {
    args.out.as_deref().context("--out is required for this command")
}

/// The dataset named by `--dataset`, or one generated from `config`.
///
/// A loaded dataset's generator settings replace those of `config`, so
/// every artifact records the settings its data actually came from.
fn dataset_for(args: &CommonArgs, config: &mut RunConfig) -> Result<Dataset> {
    match &args.dataset {
        Some(path) => {
            let data = io::load_dataset(path)?;
            if data.process.config != config.synth {
                eprintln!("note: using the generator settings stored in {}", path.display());
                config.synth = data.process.config.clone();
                config.validate()?;
            }
            Ok(data)
        }
        None => Ok(generate_dataset(&config.synth)?),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    io::write_atomic(path, text.as_bytes())?;
    Ok(())
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn gen(args: &CommonArgs) -> Result<()> {
    let config = args.resolve()?;
    let out = require_out(args)?;
    let data = generate_dataset(&config.synth)?;
    io::save_dataset(out, &data)?;
    print!("{}", io::dataset_summary(&data));
    println!("wrote {}", out.display());
    Ok(())
}

pub fn stats(args: &CommonArgs) -> Result<()> {
    let mut config = args.resolve()?;
    let data = dataset_for(args, &mut config)?;
    let tables = marginals_for(&config, &data)?;
    print!("{}", io::stats_summary(&tables, &data.process.vocab));
    let zs = zero_shot_check(&data, &tables)?;
    println!(
        "zero-shot class pairs {}: frequency uninformative {}, joint entropy < {} for {} (max {})",
        zs.pairs.len(),
        zs.freq_uninformative,
        fixed(zs.bound),
        zs.joint_informative,
        fixed(zs.max_joint_entropy)
    );
    if let Some(out) = &args.out {
        io::save_stats(out, &tables, &data.process.vocab)?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

pub fn train(args: &CommonArgs) -> Result<()> {
    let mut config = args.resolve()?;
    let out = require_out(args)?;
    let data = dataset_for(args, &mut config)?;
    let cache = FeatureCache::build(&data);
    let run = train_run(&config, &data, &cache)?;
    let model = &run.checkpoint.model;
    let records = evaluate(model, &data, &cache, config.train.task, config.train.toggles, args.workers)?;
    let table = metrics_table(&records, data.process.num_predicates(), &args.k, &args.topn);

    let mut trace = config_comment(&config);
    trace.push_str("step\ttotal\tcross_entropy\tmse\tentity_cross_entropy\n");
    for r in &run.trace {
        let _ = writeln!(
            trace,
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            r.step, r.total, r.cross_entropy, r.mse, r.entity_cross_entropy
        );
    }
    trace.push_str("# evaluation at the final step\n");
    trace.push_str(&records_with_step(&config, &table, run.checkpoint.iteration));
    io::save_checkpoint(out, &run.checkpoint)?;
    write_text(&sibling(out, ".trace.tsv"), &trace)?;

    let (first, last) = (run.trace.first(), run.trace.last());
    if let (Some(a), Some(b)) = (first, last) {
        println!("loss {} -> {} over {} steps", fixed(a.total), fixed(b.total), run.trace.len());
    }
    let label = config.train.toggles.label();
    print!("{}", recall_table(&[(label, &table)]));
    println!("wrote {}", out.display());
    Ok(())
}

fn records_with_step(config: &RunConfig, table: &landmark::experiment::MetricsTable, step: u64) -> String {
    records(&[(config.train.toggles.label(), table)])
        .lines()
        .enumerate()
        .map(|(i, l)| if i == 0 { format!("step\t{l}\n") } else { format!("{step}\t{l}\n") })
        .collect()
}

fn load_checkpoint(args: &CommonArgs) -> Result<Checkpoint> {
    let path = args.checkpoint.as_deref().context("--checkpoint is required for this command")?;
    Ok(io::load_checkpoint(path)?)
}

pub fn eval(args: &CommonArgs) -> Result<()> {
    // flags are still validated, but the run's own configuration wins
    args.resolve()?;
    let ckpt = load_checkpoint(args)?;
    let mut config = ckpt.config.clone();
    config.train.task = args.task.unwrap_or(config.train.task);
    let data = dataset_for(args, &mut config)?;
    let cache = FeatureCache::build(&data);
    let toggles = config.train.toggles;
    let k = data.process.num_predicates();
    let recs = evaluate(&ckpt.model, &data, &cache, config.train.task, toggles, args.workers)?;
    let main = metrics_table(&recs, k, &args.k, &args.topn);
    let mut rows = vec![(format!("{}/{}", toggles.label(), config.train.task.as_str()), main)];
    if toggles.eem {
        // the estimator alone against the frequency table, on ground-truth labels
        let tables = marginals_for(&config, &data)?;
        let est = estimator_records(&ckpt.model, &data)?;
        let freq = freq_records(&data, &tables)?;
        rows.push(("estimator".into(), metrics_table(&est, k, &args.k, &args.topn)));
        rows.push(("freq".into(), metrics_table(&freq, k, &args.k, &args.topn)));
    }
    let view: Vec<(String, &_)> = rows.iter().map(|(n, m)| (n.clone(), m)).collect();
    print!("{}", recall_table(&view[..1]));
    println!();
    print!("{}", topn_table(&view));
    if let Some(out) = &args.out {
        write_text(out, &(config_comment(&config) + &records(&view)))?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

pub fn ablate(args: &CommonArgs) -> Result<()> {
    let mut config = args.resolve()?;
    let data = dataset_for(args, &mut config)?;
    let cache = FeatureCache::build(&data);
    let grid = Toggles::ablation_grid();
    let rows = train_grid(&config, &grid, &data, &cache, &args.k, &args.topn, args.workers)?;
    let mut text = format!("{:<12} {:>3} {:>3} {:>3}", "model", "EEM", "LAM", "LCM");
    for k in &args.k {
        let _ = write!(text, " {:>8} {:>8}", format!("R@{k}"), format!("mR@{k}"));
    }
    text.push('\n');
    let mark = |on: bool| if on { "x" } else { "-" };
    for row in &rows {
        let t = row.toggles;
        let _ = write!(text, "{:<12} {:>3} {:>3} {:>3}", t.label(), mark(t.eem), mark(t.lam), mark(t.lcm));
        for (r, m) in row.metrics.recall.iter().zip(&row.metrics.mean_recall) {
            let _ = write!(text, " {:>8} {:>8}", fixed(*r), fixed(*m));
        }
        text.push('\n');
    }
    print!("{text}");
    if let Some(out) = &args.out {
        let view: Vec<(String, &_)> = rows.iter().map(|r| (r.toggles.label(), &r.metrics)).collect();
        write_text(out, &(config_comment(&config) + &records(&view)))?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

pub fn sweep_mu(args: &CommonArgs, mus: &[f64]) -> Result<()> {
    let mut config = args.resolve()?;
    if let Some(bad) = mus.iter().find(|m| !(0.0..=1.0).contains(*m)) {
        bail!(landmark::config::ConfigError::Invalid(format!("mu {bad} outside [0, 1]")));
    }
    let data = dataset_for(args, &mut config)?;
    let cache = FeatureCache::build(&data);
    let points = run_sweep(&config, mus, &data, &cache, &args.k, args.workers)?;
    let mut text = format!("{:>6}", "mu");
    for k in &args.k {
        let _ = write!(text, " {:>8}", format!("mR@{k}"));
    }
    text.push('\n');
    let mut tsv = config_comment(&config) + "mu\tk\tmR\tR\n";
    for p in &points {
        let _ = write!(text, "{:>6}", fixed(p.mu));
        for (i, k) in p.metrics.ks.iter().enumerate() {
            let _ = write!(text, " {:>8}", fixed(p.metrics.mean_recall[i]));
            let _ = writeln!(
                tsv,
                "{}\t{k}\t{}\t{}",
                fixed(p.mu),
                fixed(p.metrics.mean_recall[i]),
                fixed(p.metrics.recall[i])
            );
        }
        text.push('\n');
    }
    print!("{text}");
    if let Some(out) = &args.out {
        write_text(out, &tsv)?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

pub fn gradcheck(args: &CommonArgs) -> Result<()> {
    let config = args.resolve()?;
    let options = CheckOptions::default();
    let checks = gradcheck_modules(&config.model, &config.synth, &options)?;
    let mut text = String::new();
    for c in &checks {
        let verdict = if c.passed() { "PASS" } else { "FAIL" };
        let _ = writeln!(text, "{:<6} max_rel={:.3e} {verdict}", c.module, c.report.max_rel_err());
        for line in c.report.to_string().lines() {
            let _ = writeln!(text, "  {line}");
        }
    }
    print!("{text}");
    if let Some(out) = &args.out {
        write_text(out, &(config_comment(&config) + &text))?;
    }
    if checks.iter().all(|c| c.passed()) {
        Ok(())
    } else {
        Err(GradCheckFailed.into())
    }
}

pub fn report_pcc(args: &CommonArgs, baseline: &Path) -> Result<()> {
    args.resolve()?;
    let other = load_checkpoint(args)?;
    let base = io::load_checkpoint(baseline)?;
    let mut config = other.config.clone();
    let data = dataset_for(args, &mut config)?;
    let cache = FeatureCache::build(&data);
    let k = data.process.num_predicates();
    let kmax = args.k.iter().copied().max().unwrap_or(50);
    let table = |c: &Checkpoint| -> Result<_> {
        let recs = evaluate(&c.model, &data, &cache, c.config.train.task, c.config.train.toggles, args.workers)?;
        Ok(metrics_table(&recs, k, &[kmax], &[1]))
    };
    let corr = frequency_correlation(&data, &table(&base)?, &table(&other)?);
    let mut text = format!("{:<16} {:>8} {:>8}\n", "predicate", "train", format!("dR@{kmax}"));
    for (p, count, delta) in &corr.rows {
        let _ = writeln!(text, "{:<16} {count:>8} {:>8}", data.process.vocab.predicate_classes[*p], fixed(*delta));
    }
    match corr.pcc {
        Some(r) => {
            let _ = writeln!(text, "pcc {}", fixed(r));
        }
        None => text.push_str("pcc undefined (constant input)\n"),
    }
    print!("{text}");
    if let Some(out) = &args.out {
        write_text(out, &(config_comment(&config) + &text))?;
    }
    Ok(())
}
