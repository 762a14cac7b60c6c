//! `ctm`: preprocess corpora, train and apply the topic model, and evaluate
//! its predictions.

mod commands;
mod evaluate;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ctm_core::model::InputMode;

/// Exit status for usage errors and unreadable inputs.
const EXIT_USAGE: u8 = 2;
/// Exit status for every other failure.
const EXIT_FAILURE: u8 = 1;

/// Errors reported with exit status 2.
#[derive(Debug)]
pub enum UsageError {
    Message(String),
    MissingInput(PathBuf),
}

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Message(m) => f.write_str(m),
            Self::MissingInput(p) => write!(f, "input file not found: {}", p.display()),
        }
    }
}

impl std::error::Error for UsageError {}

pub fn usage(message: impl Into<String>) -> anyhow::Error {
    UsageError::Message(message.into()).into()
}

/// Fails with [`UsageError::MissingInput`] unless every given path is a
/// readable file.
pub fn require_inputs<'a>(paths: impl IntoIterator<Item = Option<&'a Path>>) -> anyhow::Result<()> {
    for p in paths.into_iter().flatten() {
        if !p.is_file() {
            return Err(UsageError::MissingInput(p.to_path_buf()).into());
        }
    }
    Ok(())
}

#[derive(Debug, Parser)]
#[command(
    name = "ctm",
    about = "Contextualized neural topic model with zero-shot cross-lingual inference",
    disable_version_flag = true,
    subcommand_required = false,
    arg_required_else_help = true
)]
struct Cli {
    /// Print version information as JSON and exit.
    #[arg(long)]
    version: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Clean a corpus, build or apply a vocabulary and write bags of words.
    Preprocess(PreprocessArgs),
    /// Train a model on bags of words and (optionally) document embeddings.
    Train(TrainArgs),
    /// Predict topic distributions for documents.
    Infer(InferArgs),
    /// Print each topic's top words as JSON.
    Topics(TopicsArgs),
    /// Compute evaluation metrics.
    #[command(subcommand)]
    Evaluate(EvaluateCommand),
    /// Write a synthetic two-view corpus with known topics.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// Corpus as JSON Lines with `id` and `text` fields.
    #[arg(long)]
    pub input: PathBuf,
    /// Language code stored on every document.
    #[arg(long)]
    pub lang: String,
    /// Stopword list, one word per line.
    #[arg(long)]
    pub stopwords: Option<PathBuf>,
    /// Reuse this vocabulary instead of building one.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long, default_value_t = 2000)]
    pub vocab_size: usize,
    /// Tokens kept per document for the bag of words.
    #[arg(long, default_value_t = 200, value_parser = clap::value_parser!(u64).range(1..))]
    pub max_tokens: u64,
    /// Drop documents with at most this many characters.
    #[arg(long, default_value_t = 0)]
    pub min_chars: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Bags of words (JSON Lines) from `preprocess`.
    #[arg(long)]
    pub bow: PathBuf,
    /// Vocabulary from `preprocess`.
    #[arg(long)]
    pub vocab: PathBuf,
    /// Document embeddings in the CTME container.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long, default_value = "contextual")]
    pub mode: InputMode,
    #[arg(long, default_value_t = 25)]
    pub topics: usize,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 2e-3)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 0.99)]
    pub adam_beta1: f64,
    #[arg(long, default_value_t = 0.999)]
    pub adam_beta2: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub adam_eps: f64,
    /// Comma-separated hidden layer widths.
    #[arg(long, value_delimiter = ',', default_value = "100,100")]
    pub hidden: Vec<usize>,
    #[arg(long, default_value_t = 0.2)]
    pub dropout: f64,
    /// Concentration of the symmetric Dirichlet prior.
    #[arg(long, default_value_t = 0.02)]
    pub alpha: f64,
    #[arg(long)]
    pub learn_decoder_bn_scale: bool,
    /// Scale each embedding to unit length before encoding.
    #[arg(long)]
    pub normalize_embeddings: bool,
    /// Checkpoint path. The loss log goes to `<out>.loss.csv`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub bow: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub samples: usize,
    /// Use softmax(mu) without sampling.
    #[arg(long)]
    pub noiseless: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TopicsArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub top_n: usize,
    /// Also write the lists to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 2000)]
    pub docs: usize,
    #[arg(long, default_value_t = 10)]
    pub topics: usize,
    #[arg(long, default_value_t = 200)]
    pub vocab_size: usize,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum EvaluateCommand {
    /// Percentage of documents whose most likely topic agrees.
    Match(PairArgs),
    /// Mean KL(a || b) over documents.
    Kl(KlArgs),
    /// Mean centroid similarity of the predicted topics' top words.
    Cd(CdArgs),
    /// NPMI coherence of the model's topics on a reference corpus.
    Npmi(NpmiArgs),
    /// Gwet's agreement coefficient for a ratings CSV.
    Ac1(Ac1Args),
    /// Per-language match, KL and centroid similarity with a uniform
    /// baseline.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct OutArg {
    /// Also write the JSON result (and a run manifest) here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PairArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Args)]
pub struct KlArgs {
    #[command(flatten)]
    pub pair: PairArgs,
    #[arg(long, default_value_t = ctm_core::metrics::EPSILON)]
    pub epsilon: f64,
}

#[derive(Debug, Args)]
pub struct CdArgs {
    #[command(flatten)]
    pub pair: PairArgs,
    #[arg(long)]
    pub model: PathBuf,
    /// Word vectors in the CTME container, keyed by token.
    #[arg(long)]
    pub word_vectors: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub top_n: usize,
}

#[derive(Debug, Args)]
pub struct NpmiArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Reference corpus (JSON Lines); documents are tokenized as in
    /// `preprocess`.
    #[arg(
        long,
        required_unless_present = "reference_bow",
        conflicts_with = "reference_bow"
    )]
    pub reference: Option<PathBuf>,
    /// Reference bags of words over the model's vocabulary.
    #[arg(long)]
    pub reference_bow: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub top_n: usize,
    #[arg(long, default_value_t = ctm_core::metrics::EPSILON)]
    pub epsilon: f64,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum WeightsArg {
    Ordinal,
    Identity,
}

#[derive(Debug, Args)]
pub struct Ac1Args {
    /// CSV with header `item,rater,score` and scores in 0..=3.
    #[arg(long)]
    pub ratings: PathBuf,
    #[arg(long, value_enum, default_value_t = WeightsArg::Ordinal)]
    pub weights: WeightsArg,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum KlDirectionArg {
    /// KL(other || reference)
    OtherToReference,
    /// KL(reference || other)
    ReferenceToOther,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Predictions for the training language.
    #[arg(long)]
    pub reference: PathBuf,
    /// `LANG=PATH` predictions for another language; repeatable.
    #[arg(long = "lang", value_parser = parse_lang_path, required = true)]
    pub langs: Vec<(String, PathBuf)>,
    /// Model whose topic words feed centroid similarity.
    #[arg(long, requires = "word_vectors")]
    pub model: Option<PathBuf>,
    #[arg(long, requires = "model")]
    pub word_vectors: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = KlDirectionArg::OtherToReference)]
    pub kl_direction: KlDirectionArg,
    #[arg(long, value_enum, default_value_t = KlDirectionArg::OtherToReference)]
    pub baseline_kl_direction: KlDirectionArg,
    #[arg(long, default_value_t = 5)]
    pub top_n: usize,
    #[command(flatten)]
    pub out: OutArg,
}

fn parse_lang_path(s: &str) -> Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((lang, path)) if !lang.is_empty() && !path.is_empty() => {
            Ok((lang.to_string(), PathBuf::from(path)))
        }
        _ => Err(format!("expected LANG=PATH, got {s:?}")),
    }
}

fn version_json() -> String {
    serde_json::json!({
        "name": "ctm",
        "version": env!("CARGO_PKG_VERSION"),
        "checkpoint_format": ctm_core::model::checkpoint::FORMAT,
        "checkpoint_version": ctm_core::model::checkpoint::FORMAT_VERSION,
        "embedding_format_version": ctm_core::embeddings::VERSION,
    })
    .to_string()
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if cli.version {
        println!("{}", version_json());
        return Ok(());
    }
    match cli.command {
        None => Err(usage("a subcommand is required; see --help")),
        Some(Command::Preprocess(a)) => commands::preprocess(&a),
        Some(Command::Train(a)) => commands::train(&a),
        Some(Command::Infer(a)) => commands::infer(&a),
        Some(Command::Topics(a)) => commands::topics(&a),
        Some(Command::Evaluate(c)) => evaluate::run(&c),
        Some(Command::Synth(a)) => commands::synth(&a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CTM_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::from(EXIT_FAILURE)
            }
        }
    }
}
