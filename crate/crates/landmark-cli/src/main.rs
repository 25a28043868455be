//! `landmark`: generate the synthetic benchmark, train and evaluate models,
//! run the ablation grid and the μ sweep, and check gradients.

mod commands;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use landmark::config::{ConfigError, RunConfig};
use landmark::error::ModelError;
use landmark::io::PersistError;
use landmark::model::Task;

#[derive(Parser)]
#[command(name = "landmark", version, about = "Language-guided scene graph toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Gen(CommonArgs),
    /// Compute marginal and frequency tables of a dataset's training split.
    Stats(CommonArgs),
    /// Train one model and write its checkpoint.
    Train(CommonArgs),
    /// Evaluate a checkpoint.
    Eval(CommonArgs),
    /// Train and evaluate the five module configurations.
    Ablate(CommonArgs),
    /// Train and evaluate one model per estimator mixing factor.
    SweepMu {
        #[command(flatten)]
        common: CommonArgs,
        /// Mixing factors to try.
        #[arg(long, value_delimiter = ',', default_value = "0,0.3,0.5,0.7,0.9,1")]
        mus: Vec<f64>,
    },
    /// Finite-difference check of every module's gradients.
    Gradcheck(CommonArgs),
    /// Correlate per-class recall gains with training frequency.
    ReportPcc {
        #[command(flatten)]
        common: CommonArgs,
        /// Checkpoint the gains are measured against.
        #[arg(long)]
        baseline: PathBuf,
    },
}

/// Flags shared by every subcommand. Configuration is resolved as
/// defaults, then `--config`, then `LANDMARK_*` variables, then flags.
#[derive(Args, Clone, Debug, Default)]
pub struct CommonArgs {
    /// Configuration file of `key = value` lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed of the generator, the initialization and training.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_parser = parse_task)]
    pub task: Option<Task>,
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub enable_eem: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub enable_lam: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub enable_lcm: Option<bool>,
    /// Recall cutoffs.
    #[arg(long, value_delimiter = ',', default_value = "20,50,100")]
    pub k: Vec<usize>,
    /// Per-pair predicate budgets of Top-N recall.
    #[arg(long, value_delimiter = ',', default_value = "1,5")]
    pub topn: Vec<usize>,
    /// Threads for independent work; results do not depend on it.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Output file.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Extra `key=value` assignments, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

fn parse_task(s: &str) -> Result<Task, String> {
    Task::parse(s).ok_or_else(|| format!("unknown task {s:?} (expected predcls or sgcls)"))
}

impl CommonArgs {
    /// The resolved run configuration.
    pub fn resolve(&self) -> anyhow::Result<RunConfig> {
        let mut config = RunConfig::default();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path).map_err(|source| PersistError::Io {
                path: path.clone(),
                source,
            })?;
            config
                .apply_text(&text)
                .with_context(|| format!("in {}", path.display()))?;
        }
        config.apply_env(std::env::vars())?;
        if let Some(seed) = self.seed {
            config.set_seed(seed);
        }
        let t = &mut config.train;
        if let Some(task) = self.task {
            t.task = task;
        }
        if let Some(mu) = self.mu {
            t.mu = mu;
        }
        if let Some(lambda) = self.lambda {
            t.lambda = lambda;
        }
        if let Some(n) = self.iterations {
            t.iterations = n;
        }
        if let Some(on) = self.enable_eem {
            t.toggles.eem = on;
        }
        if let Some(on) = self.enable_lam {
            t.toggles.lam = on;
        }
        if let Some(on) = self.enable_lcm {
            t.toggles.lcm = on;
        }
        for assignment in &self.set {
            let (k, v) = assignment
                .split_once('=')
                .ok_or_else(|| ConfigError::Invalid(format!("--set expects KEY=VALUE, got {assignment:?}")))?;
            config.set(k, v)?;
        }
        if self.k.iter().chain(&self.topn).any(|v| *v == 0) {
            return Err(ConfigError::Invalid("K and N values must be positive".into()).into());
        }
        config.validate()?;
        Ok(config)
    }
}

/// Process exit statuses.
pub mod exit {
    pub const OK: u8 = 0;
    pub const OTHER: u8 = 1;
    pub const CONFIG: u8 = 2;
    pub const MISSING_FILE: u8 = 3;
    pub const FORMAT: u8 = 4;
    pub const GRADCHECK: u8 = 5;
    pub const DIVERGED: u8 = 6;
}

/// A check that ran to completion but did not pass.
#[derive(Debug)]
pub struct GradCheckFailed;

impl std::fmt::Display for GradCheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("gradient check failed")
    }
}

impl std::error::Error for GradCheckFailed {}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<GradCheckFailed>() {
            return exit::GRADCHECK;
        }
        if cause.is::<ConfigError>() {
            return exit::CONFIG;
        }
        if let Some(e) = cause.downcast_ref::<PersistError>() {
            return match e {
                PersistError::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => exit::MISSING_FILE,
                PersistError::Io { .. } => exit::OTHER,
                PersistError::Load { .. } => exit::FORMAT,
                PersistError::Config(_) => exit::CONFIG,
                PersistError::Model(m) => model_code(m),
            };
        }
        if let Some(e) = cause.downcast_ref::<ModelError>() {
            return model_code(e);
        }
    }
    exit::OTHER
}

fn model_code(e: &ModelError) -> u8 {
    match e {
        ModelError::NonFinite { .. } => exit::DIVERGED,
        ModelError::Config(_) => exit::CONFIG,
        _ => exit::OTHER,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Gen(a) => commands::gen(a),
        Command::Stats(a) => commands::stats(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::SweepMu { common, mus } => commands::sweep_mu(common, mus),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::ReportPcc { common, baseline } => commands::report_pcc(common, baseline),
    };
    match result {
        Ok(()) => ExitCode::from(exit::OK),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
