//! `multitag`: ingest tag triples, train taggers and smoothers, evaluate them
//! by cross-validation, and self-check the estimators.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use multitag::estimators::EstimatorKind;
use multitag::modelfile::ModelKind;

use config::Layers;

#[derive(Parser)]
#[command(name = "multitag", version, about = "Multi-label music tagging with discriminative RBMs")]
struct Cli {
    /// `key = value` settings file; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Turn (user, item, tag) triples and item features into a corpus directory.
    Ingest(IngestArgs),
    /// Train a tagger or a tag smoother on a corpus.
    Train(TrainArgs),
    /// Write smoothed tag probabilities for every clip of a corpus.
    Smooth(SmoothArgs),
    /// Score every item of a corpus with a trained tagger.
    Predict(PredictArgs),
    /// Cross-validate a model family, or compare two saved reports.
    Eval(EvalArgs),
    /// Check every estimator against exact enumeration on small models.
    OracleCheck(OracleArgs),
    /// Generate a synthetic triples/features/items corpus.
    Synth(SynthArgs),
}

#[derive(Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub triples: Option<PathBuf>,
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Optional item → track map.
    #[arg(long)]
    pub items: Option<PathBuf>,
    /// The features file starts with a header row.
    #[arg(long)]
    pub features_header: bool,
    /// Number of most frequent tags to keep (default 50).
    #[arg(long)]
    pub vocab_size: Option<usize>,
    /// Users needed for a tag to count as positive (default 2).
    #[arg(long)]
    pub min_positive: Option<u32>,
    /// Output corpus directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Corpus directory written by `ingest`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output model file.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// drbm, gaussian-rbm, mlp, logreg or smoother (default drbm).
    #[arg(long)]
    pub kind: Option<ModelKind>,
    /// cd, mfcd, lbp, pl or exact (default cd).
    #[arg(long)]
    pub estimator: Option<EstimatorKind>,
    /// CD/MFCD chain length or LBP sweeps (default 1).
    #[arg(short, long)]
    pub k: Option<usize>,
    /// LBP damping (default 0.9).
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// ℓ1 weight on the smoother's auxiliary weights (default 0.001).
    #[arg(long)]
    pub l1: Option<f64>,
    /// Smoothed targets file to train on instead of the raw labels.
    #[arg(long)]
    pub targets: Option<PathBuf>,
    /// Test-time inference for RBM taggers: lbp or mf (default lbp).
    #[arg(long)]
    pub inference: Option<String>,
    /// Test-time inference sweeps (default 10).
    #[arg(long)]
    pub inference_k: Option<usize>,
}

#[derive(Args)]
pub struct SmoothArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Smoother model file.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Output targets file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Output scores file.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides the inference recorded in the model.
    #[arg(long)]
    pub inference: Option<String>,
    #[arg(long)]
    pub inference_k: Option<usize>,
    #[arg(long)]
    pub beta: Option<f64>,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory for report, selection and summary files.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// drbm, gaussian-rbm, mlp, logreg or random (default drbm).
    #[arg(long)]
    pub kind: Option<String>,
    /// Reuse the settings recorded in a trained model file.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Name written into the report (default derived from the kind).
    #[arg(long)]
    pub name: Option<String>,
    /// Smoothed training targets; evaluation always uses the raw labels.
    #[arg(long)]
    pub targets: Option<PathBuf>,
    /// Keep clips of one track in the same fold.
    #[arg(long)]
    pub group_tracks: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Seed of the fold assignment (default: the run seed).
    #[arg(long)]
    pub fold_seed: Option<u64>,
    /// Comma-separated grid values follow; every combination is tried.
    #[arg(long, value_delimiter = ',')]
    pub estimator: Vec<EstimatorKind>,
    #[arg(short, long, value_delimiter = ',')]
    pub k: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    pub beta: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    pub lr: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    pub epochs: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    pub hidden: Vec<usize>,
    #[arg(long)]
    pub inference: Option<String>,
    #[arg(long)]
    pub inference_k: Option<usize>,
    /// Compare two report.tsv files with per-tag paired t-tests.
    #[arg(long, num_args = 2, value_names = ["A", "B"])]
    pub compare: Vec<PathBuf>,
    /// Significance level for --compare (default 0.05).
    #[arg(long)]
    pub alpha: Option<f64>,
}

#[derive(Args)]
pub struct OracleArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Largest label count in the tree check (default 12, at most 20).
    #[arg(long)]
    pub labels: Option<usize>,
    /// Chains in the CD consistency check (default 100000).
    #[arg(long)]
    pub cd_runs: Option<usize>,
    /// Use the pairwise normalizer that omits the (0,0) state; the tree check should then fail.
    #[arg(long)]
    pub debug_printed_normalizer: bool,
}

#[derive(Args)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub items: Option<usize>,
    #[arg(long)]
    pub tags: Option<usize>,
    /// Feature dimension.
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub users: Option<usize>,
    #[arg(long)]
    pub users_per_item: Option<usize>,
    #[arg(long)]
    pub recall: Option<f64>,
    #[arg(long)]
    pub false_tag_rate: Option<f64>,
    #[arg(long)]
    pub clips_per_track: Option<usize>,
    #[arg(long)]
    pub clip_jitter: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub tag_bias: Option<f64>,
    /// Make tags come in pairs sharing one teacher.
    #[arg(long)]
    pub tied_pairs: bool,
    #[arg(long)]
    pub seed: Option<u64>,
}

fn run(cli: Cli) -> multitag::Result<bool> {
    let layers = Layers::load(cli.config.as_deref())?;
    match cli.command {
        Command::Ingest(a) => commands::ingest_cmd(a, &layers)?,
        Command::Train(a) => commands::train_cmd(a, &layers)?,
        Command::Smooth(a) => commands::smooth_cmd(a, &layers)?,
        Command::Predict(a) => commands::predict_cmd(a, &layers)?,
        Command::Eval(a) => commands::eval_cmd(a, &layers)?,
        Command::OracleCheck(a) => return commands::oracle_check_cmd(a, &layers),
        Command::Synth(a) => commands::synth_cmd(a, &layers)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
