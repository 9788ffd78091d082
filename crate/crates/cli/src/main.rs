use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod config;

use config::ProjectConfig;

/// Weak supervision and active learning for text labeling.
#[derive(Debug, Parser)]
#[command(name = "weaklab", version)]
struct Cli {
    /// Project config; defaults to ./weaklab.toml when present.
    #[arg(long, global = true, env = "WEAKLAB_CONFIG")]
    config: Option<PathBuf>,

    #[arg(long, global = true, value_enum, default_value_t = Format::Table)]
    format: Format,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    /// Aligned text for people.
    Table,
    /// One JSON object per line.
    Records,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load examples, run rule LFs and write the dataset and label matrix.
    Ingest(IngestArgs),
    /// Coverage, overlap, conflict and accuracy per labeling function.
    LfStats,
    /// Agreement between annotators (Cohen pairwise, Fleiss overall).
    Kappa(KappaArgs),
    /// Fit the generative label model on the matrix.
    FitLabelModel(ForceArgs),
    /// Write posterior labels from fitted parameters.
    ApplyLabelModel(ApplyArgs),
    /// Pick the next batch of examples to label.
    Sample(SampleArgs),
    /// Discard a labeling function and drop its votes.
    RetireLf(RetireArgs),
    /// Train the classifier on posteriors with the five-config search.
    Train(TrainArgs),
    /// Per-class accuracy of the trained classifier on gold examples.
    Evaluate(EvaluateArgs),
    /// Annotator-count by examples-cap sweep of label model accuracy.
    Ablate(AblateArgs),
    /// Run the annotation HTTP service.
    Serve(ServeArgs),
    /// Re-execute the rounds log and write the resulting outputs.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Examples file (JSON lines: id, text, optional gold and features).
    #[arg(long)]
    pub examples: PathBuf,
    /// Existing votes to keep (JSON lines: example_id, lf_id, label).
    #[arg(long)]
    pub votes: Option<PathBuf>,
    /// Rules file; defaults to the configured one when it exists.
    #[arg(long)]
    pub rules: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct KappaArgs {
    /// LF ids to compare; defaults to every active annotator.
    #[arg(long, value_delimiter = ',')]
    pub lfs: Vec<String>,
}

#[derive(Debug, Args)]
pub struct ForceArgs {
    /// Overwrite an existing output file.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct ApplyArgs {
    /// Where to write posteriors; defaults to the configured path.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SampleStrategy {
    /// Mix conflict and least-labeled picks by the configured weight.
    Auto,
    Conflict,
    LeastLabeled,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long, value_enum, default_value_t = SampleStrategy::Auto)]
    pub strategy: SampleStrategy,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub batch: usize,
    /// Candidate ids, one per line; defaults to examples no annotator labeled.
    #[arg(long)]
    pub pool: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RetireArgs {
    pub lf_id: String,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub seed: u64,
    /// Share of covered examples held out to pick the configuration.
    #[arg(long, default_value_t = 0.2)]
    pub validation_fraction: f64,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Gold-labeled examples; defaults to the gold examples of the dataset.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long, default_value_t = weaklab::classifier::DEFAULT_MIN_SUPPORT)]
    pub min_support: usize,
    /// Classes left out of the table.
    #[arg(long, value_delimiter = ',')]
    pub exclude: Vec<String>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub seed: u64,
    /// Directory for grid.csv and summary.csv.
    #[arg(long, default_value = "ablation")]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [2usize, 4, 8, 16])]
    pub annotators: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [50usize, 200, 1000])]
    pub caps: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    pub trials: usize,
    #[arg(long, default_value_t = 100)]
    pub test_per_class: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [0.6, 0.7, 0.8, 0.9])]
    pub targets: Vec<f64>,
    /// Size of the simulated dataset.
    #[arg(long, default_value_t = 4000)]
    pub examples: usize,
    #[arg(long, default_value_t = 2)]
    pub classes: usize,
    /// Number of simulated annotators.
    #[arg(long, default_value_t = 16)]
    pub pool_size: usize,
    /// Seed for drawing the simulated annotators; defaults to --seed.
    #[arg(long)]
    pub pool_seed: Option<u64>,
    /// Use real crowd labels: comments TSV (rev_id, comment).
    #[arg(long, requires = "toxicity_annotations")]
    pub toxicity_comments: Option<PathBuf>,
    /// Annotations TSV (rev_id, worker_id, toxicity).
    #[arg(long, requires = "toxicity_comments")]
    pub toxicity_annotations: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub host: Option<String>,
    #[arg(long)]
    pub port: Option<u16>,
    /// Annotator id to register, in addition to the configured ones.
    #[arg(long = "annotator")]
    pub annotators: Vec<String>,
    /// Origin allowed by CORS.
    #[arg(long)]
    pub allowed_origin: Option<String>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// Directory for matrix.jsonl, params.json and model.json.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug)]
pub enum Failure {
    /// Bad invocation or configuration; exit code 1.
    Usage(String),
    /// Input data could not be processed; exit code 2.
    Data(String),
}

impl From<weaklab::Error> for Failure {
    fn from(e: weaklab::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let config = ProjectConfig::load(cli.config.as_deref())?;
    let ctx = commands::Ctx {
        config,
        format: cli.format,
    };
    match cli.command {
        Command::Ingest(args) => commands::ingest(&ctx, &args),
        Command::LfStats => commands::lf_stats(&ctx),
        Command::Kappa(args) => commands::kappa(&ctx, &args),
        Command::FitLabelModel(args) => commands::fit_label_model(&ctx, &args),
        Command::ApplyLabelModel(args) => commands::apply_label_model(&ctx, &args),
        Command::Sample(args) => commands::sample(&ctx, &args),
        Command::RetireLf(args) => commands::retire_lf(&ctx, &args),
        Command::Train(args) => commands::train(&ctx, &args),
        Command::Evaluate(args) => commands::evaluate(&ctx, &args),
        Command::Ablate(args) => commands::ablate(&ctx, &args),
        Command::Serve(args) => commands::serve(&ctx, &args),
        Command::Replay(args) => commands::replay(&ctx, &args),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
