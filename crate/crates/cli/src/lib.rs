//! The `emoroute` command line: one binary with a subcommand per workflow
//! step. Settings come from an optional TOML file (see [`config`]); flags
//! override it, and every report embeds the resolved configuration.

pub mod commands;
pub mod config;
pub mod error;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::RunConfig;
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "emoroute", version, about = "Hybrid speech emotion recognition workflows")]
pub struct Cli {
    /// TOML configuration file; flags take precedence over its values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic three-class corpus.
    Synth(SynthArgs),
    /// Standardize, voice-detect and segment a directory of WAV files.
    Preprocess(PreprocessArgs),
    /// Extract feature vectors for every manifest entry.
    Features(FeaturesArgs),
    /// Train the classifier and reference statistics on the training splits.
    Train(TrainArgs),
    /// Label a manifest with one prompt configuration.
    Predict(PredictArgs),
    /// Score a predictions file against manifest gold labels.
    Evaluate(EvaluateArgs),
    /// Inter-annotator agreement.
    Kappa(KappaArgs),
    /// Mine error patterns and manage rule proposals.
    #[command(subcommand)]
    Refine(RefineCommand),
    /// Run every configuration over a manifest and tabulate the results.
    Compare(CompareArgs),
    /// Hybrid runs over a grid of routing thresholds.
    Sweep(SweepArgs),
}

#[derive(Debug, Subcommand)]
pub enum RefineCommand {
    /// Write rule proposals derived from a predictions file.
    Propose(ProposeArgs),
    /// Create a new rules file from accepted proposals.
    Apply(ApplyArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct InputArgs {
    #[arg(long, value_name = "FILE")]
    pub manifest: Option<PathBuf>,
    /// Feature CSV keyed by sample id.
    #[arg(long, value_name = "FILE")]
    pub features: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ModelArgs {
    #[arg(long, value_name = "FILE")]
    pub model: Option<PathBuf>,
    /// Reference corpus statistics (JSON).
    #[arg(long, value_name = "FILE")]
    pub stats: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct LlmArgs {
    #[arg(long, value_name = "FILE")]
    pub rules: Option<PathBuf>,
    /// Rules for the refined and hybrid configurations.
    #[arg(long, value_name = "FILE")]
    pub refined_rules: Option<PathBuf>,
    /// Endpoint base URL, or `mock://rules-literal`, `mock://calm`,
    /// `mock://gibberish`, `mock://timeout`.
    #[arg(long, value_name = "URL")]
    pub endpoint: Option<String>,
    #[arg(long, value_name = "NAME")]
    pub llm_model: Option<String>,
    #[arg(long, value_name = "SECONDS")]
    pub timeout: Option<f64>,
    #[arg(long, value_name = "N")]
    pub max_retries: Option<u32>,
    #[arg(long, value_name = "N")]
    pub max_in_flight: Option<usize>,
    /// Response cache directory.
    #[arg(long, value_name = "DIR")]
    pub cache: Option<PathBuf>,
    /// `sample_id,transcript` CSV for the text-only baseline.
    #[arg(long, value_name = "FILE")]
    pub transcripts: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub tau: Option<f64>,
    /// Only label entries of this split (set1, set2, set3, test).
    #[arg(long)]
    pub split: Option<String>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Keep per-sample latencies in predictions files.
    #[arg(long)]
    pub timings: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    pub overlap: f64,
    #[arg(long, default_value_t = 50)]
    pub n_per_class: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, value_name = "SECONDS")]
    pub duration: Option<f64>,
    /// Use the planted pitch-error recipe.
    #[arg(long)]
    pub planted: bool,
    /// Assign stratified set1/set2/set3/test splits.
    #[arg(long)]
    pub split: bool,
}

#[derive(Debug, Clone, Args)]
pub struct PreprocessArgs {
    #[arg(long = "in", value_name = "DIR")]
    pub input: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Source kind recorded for every segment.
    #[arg(long, default_value = "interview")]
    pub source_kind: String,
}

#[derive(Debug, Clone, Args)]
pub struct FeaturesArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub frame_ms: Option<f64>,
    #[arg(long)]
    pub hop_ms: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub svm_c: Option<f64>,
    #[arg(long)]
    pub svm_tol: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub llm: LlmArgs,
    #[command(flatten)]
    pub run: RunArgs,
    /// v1_basic, v2_rules, v3_refined, v4_hybrid, v5_auto or text_baseline.
    #[arg(long)]
    pub version: Option<String>,
    /// Use these rules for v5 instead of generating them.
    #[arg(long, value_name = "FILE")]
    pub auto_rules: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[arg(long, value_name = "FILE")]
    pub predictions: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub manifest: Option<PathBuf>,
    /// Write the metrics report here as JSON.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Print JSON instead of a table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Args)]
pub struct KappaArgs {
    /// `sample_id,annotator_a,annotator_b,annotator_c` CSV.
    #[arg(long, value_name = "FILE")]
    pub annotations: Option<PathBuf>,
    /// Read annotator columns from a manifest instead.
    #[arg(long, value_name = "FILE")]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ProposeArgs {
    #[arg(long, value_name = "FILE")]
    pub predictions: PathBuf,
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, value_name = "FILE")]
    pub stats: Option<PathBuf>,
    /// Rules the predictions were made with.
    #[arg(long, value_name = "FILE")]
    pub rules: Option<PathBuf>,
    #[arg(long, default_value_t = emoroute::refine::DEFAULT_MIN_SUPPORT)]
    pub min_support: usize,
    /// Proposals file to write.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ApplyArgs {
    #[arg(long, value_name = "FILE")]
    pub rules: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub proposals: PathBuf,
    /// Comma-separated proposal rule ids to accept.
    #[arg(long, value_delimiter = ',', conflicts_with = "accept_all")]
    pub accept: Vec<String>,
    #[arg(long)]
    pub accept_all: bool,
    /// New rules file; must not exist yet.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub llm: LlmArgs,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub llm: LlmArgs,
    #[command(flatten)]
    pub run: RunArgs,
    /// Comma-separated thresholds; defaults to the standard grid.
    #[arg(long, value_delimiter = ',')]
    pub taus: Vec<f64>,
}

/// Parses `args` (program name first) and runs the command.
///
/// Help and version requests print and return `Ok`; any other parse
/// failure is a configuration error.
pub fn run_from_args<I, T>(args: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return Ok(());
        }
        Err(e) => return Err(CliError::Config(e.to_string().trim_end().to_string())),
    };
    run(cli)
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    commands::dispatch(cli.command, &mut cfg)
}
