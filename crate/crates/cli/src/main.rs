use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use phylo_nbe::sim::{AltSamplingConfig, SimModel};

mod commands;
mod config;

use config::{load_or_default, EvaluateConfig, FinetuneRunConfig, PredictConfig, SimulateConfig, TrainRunConfig};

/// Simulate epidemics, train a neural Bayes estimator on their
/// reconstructed trees and query it.
///
/// Every flag can also be given in the JSON file passed with `--config`;
/// flags win over the file.
#[derive(Debug, Parser)]
#[command(name = "nbe", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate train/val/test datasets from disjoint seed ranges.
    Simulate(SimulateArgs),
    /// Train a model from scratch.
    Train(TrainArgs),
    /// Retrain the prediction network of a checkpoint on new data.
    Finetune(FinetuneArgs),
    /// Quantile trajectories for one tree.
    Predict(PredictArgs),
    /// Accuracy and calibration on a test set.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModelArg {
    Standard,
    DelayedSampling,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// First seed; record seeds run on from here across train, val and test.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_val: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    /// Measurements per record.
    #[arg(long)]
    measurements: Option<usize>,
    #[arg(long, value_enum)]
    model: Option<ModelArg>,
    /// Only summarise this many prior draws instead of simulating.
    #[arg(long)]
    prior_draws: Option<usize>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    val: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    measurements: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    embedding_dim: Option<usize>,
}

#[derive(Debug, Args)]
struct FinetuneArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Pre-trained checkpoint.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    val: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// File holding one Newick tree.
    #[arg(long)]
    newick: Option<PathBuf>,
    /// Output CSV; standard output if absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Rate of becoming uninfectious, per day.
    #[arg(long)]
    sigma: Option<f64>,
    /// Comma-separated days before the most recent sample.
    #[arg(long, value_delimiter = ',')]
    times: Option<Vec<f64>>,
    /// Comma-separated quantile levels.
    #[arg(long, value_delimiter = ',')]
    taus: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Score a predictor that returns the truth with +/- delta intervals.
    #[arg(long)]
    oracle: bool,
    #[arg(long)]
    oracle_delta: Option<f64>,
    /// Exit with status 2 if any 95% coverage is below its acceptance band.
    #[arg(long)]
    strict: bool,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn resolve_simulate(a: SimulateArgs) -> Result<SimulateConfig> {
    let mut c: SimulateConfig = load_or_default(a.config.as_deref())?;
    c.out = a.out.or(c.out);
    c.seed = a.seed.or(c.seed);
    set(&mut c.n_train, a.n_train);
    set(&mut c.n_val, a.n_val);
    set(&mut c.n_test, a.n_test);
    set(&mut c.measurements_per_record, a.measurements);
    if let Some(m) = a.model {
        c.model = match m {
            ModelArg::Standard => SimModel::Standard,
            ModelArg::DelayedSampling => SimModel::DelayedSampling(AltSamplingConfig::default()),
        };
    }
    c.prior_draws = a.prior_draws.or(c.prior_draws);
    Ok(c)
}

fn resolve_train(a: TrainArgs) -> Result<TrainRunConfig> {
    let mut c: TrainRunConfig = load_or_default(a.config.as_deref())?;
    c.train = a.train.or(c.train);
    c.val = a.val.or(c.val);
    c.out = a.out.or(c.out);
    c.seed = a.seed.or(c.seed);
    set(&mut c.training.epochs, a.epochs);
    set(&mut c.training.batch_size, a.batch_size);
    set(&mut c.training.measurements_per_sim, a.measurements);
    set(&mut c.training.optimizer.learning_rate, a.learning_rate);
    set(&mut c.training.dropout, a.dropout);
    set(&mut c.btu.embedding_dim, a.embedding_dim);
    Ok(c)
}

fn resolve_finetune(a: FinetuneArgs) -> Result<FinetuneRunConfig> {
    let mut c: FinetuneRunConfig = load_or_default(a.config.as_deref())?;
    c.init = a.init.or(c.init);
    c.train = a.train.or(c.train);
    c.val = a.val.or(c.val);
    c.out = a.out.or(c.out);
    set(&mut c.seed, a.seed);
    set(&mut c.training.epochs, a.epochs);
    set(&mut c.training.batch_size, a.batch_size);
    set(&mut c.training.optimizer.learning_rate, a.learning_rate);
    Ok(c)
}

fn resolve_predict(a: PredictArgs) -> Result<PredictConfig> {
    let mut c: PredictConfig = load_or_default(a.config.as_deref())?;
    c.checkpoint = a.checkpoint.or(c.checkpoint);
    c.newick = a.newick.or(c.newick);
    c.out = a.out.or(c.out);
    c.sigma = a.sigma.or(c.sigma);
    set(&mut c.times, a.times);
    set(&mut c.taus, a.taus);
    Ok(c)
}

fn resolve_evaluate(a: EvaluateArgs) -> Result<EvaluateConfig> {
    let mut c: EvaluateConfig = load_or_default(a.config.as_deref())?;
    c.checkpoint = a.checkpoint.or(c.checkpoint);
    c.test = a.test.or(c.test);
    c.out = a.out.or(c.out);
    c.oracle |= a.oracle;
    c.strict |= a.strict;
    set(&mut c.oracle_delta, a.oracle_delta);
    Ok(c)
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("NBE_THREADS") {
        let n: usize = v.trim().parse().with_context(|| format!("NBE_THREADS={v}"))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .context("configuring worker threads")?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    init_threads()?;
    match cli.command {
        Command::Simulate(a) => commands::simulate(resolve_simulate(a)?),
        Command::Train(a) => commands::train(resolve_train(a)?),
        Command::Finetune(a) => commands::finetune(resolve_finetune(a)?),
        Command::Predict(a) => commands::predict(resolve_predict(a)?),
        Command::Evaluate(a) => commands::evaluate(resolve_evaluate(a)?),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
