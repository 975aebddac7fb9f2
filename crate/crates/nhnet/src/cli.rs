//! The `nhnet` command line.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use nhnet_core::attention::AttentionVariant;
use nhnet_core::model::WeightMode;
use nhnet_core::optim::AdamConfig;
use nhnet_core::transformer::{Activation, ModelConfig};

use crate::commands;
use crate::config;
use crate::error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "nhnet", version, about = "Multi-document news headline generation")]
pub struct Cli {
    /// Key-value config file; flags on the command line take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Learn a subword vocabulary from a corpus.
    BuildVocab(BuildVocabArgs),
    /// Tokenize a text file, one text per line.
    Tokenize(TokenizeArgs),
    /// Generate a separable synthetic corpus.
    SynthCorpus(SynthCorpusArgs),
    /// Replace one article per story with an article from another story.
    InjectNoise(InjectNoiseArgs),
    /// Split a corpus by timestamp.
    Split(SplitArgs),
    /// Train the title/body matching scorer.
    TrainScorer(TrainScorerArgs),
    /// Label stories with a representative article title.
    DistantLabel(DistantLabelArgs),
    /// Masked-LM warmup of the encoder.
    MlmWarmup(MlmWarmupArgs),
    /// Train a headline model.
    Train(TrainArgs),
    /// Generate headlines with beam search or greedy decoding.
    Generate(GenerateArgs),
    /// Longest common subsequence of article titles.
    LcsBaseline(LcsBaselineArgs),
    /// Representative title chosen by the scorer.
    RepTitles(RepTitlesArgs),
    /// Score predictions against gold headlines.
    Evaluate(EvaluateArgs),
    /// Restore capitalization of predicted headlines.
    Truecase(TruecaseArgs),
    /// Compare analytic and finite-difference gradients.
    GradCheck(GradCheckArgs),
    /// Report article-attention and block parameter counts.
    ParamCount(ParamCountArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Attention {
    Uniform,
    Referee,
    #[value(name = "self_voting", alias = "self-voting")]
    SelfVoting,
}

impl From<Attention> for AttentionVariant {
    fn from(a: Attention) -> Self {
        match a {
            Attention::Uniform => AttentionVariant::Uniform,
            Attention::Referee => AttentionVariant::Referee,
            Attention::SelfVoting => AttentionVariant::SelfVoting,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Desk,
    Paper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationArg {
    Relu,
    Gelu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    Scratch,
    FromCheckpoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightModeArg {
    #[value(name = "per_step", alias = "per-step")]
    PerStep,
    Static,
}

impl From<WeightModeArg> for WeightMode {
    fn from(w: WeightModeArg) -> Self {
        match w {
            WeightModeArg::PerStep => WeightMode::PerStep,
            WeightModeArg::Static => WeightMode::Static,
        }
    }
}

/// Block shape: a preset with optional overrides.
#[derive(Debug, Clone, Args, Serialize)]
pub struct ModelArgs {
    #[arg(long, value_enum, default_value_t = Preset::Desk)]
    pub preset: Preset,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub value_dim: Option<usize>,
    #[arg(long)]
    pub ffn_dim: Option<usize>,
    #[arg(long)]
    pub max_positions: Option<usize>,
    #[arg(long)]
    pub max_article_tokens: Option<usize>,
    #[arg(long, value_enum)]
    pub activation: Option<ActivationArg>,
}

impl ModelArgs {
    pub fn resolve(&self, vocab_size: usize) -> Result<ModelConfig> {
        let mut c = match self.preset {
            Preset::Desk => ModelConfig::desk_scale(vocab_size),
            Preset::Paper => ModelConfig::paper_scale(vocab_size),
        };
        if let Some(v) = self.layers {
            c.num_layers = v;
        }
        if let Some(v) = self.heads {
            c.num_heads = v;
        }
        if let Some(v) = self.hidden_dim {
            c.hidden_dim = v;
            if self.ffn_dim.is_none() {
                c.ffn_dim = 4 * v;
            }
        }
        if let Some(v) = self.value_dim {
            c.value_dim = v;
        }
        if let Some(v) = self.ffn_dim {
            c.ffn_dim = v;
        }
        if let Some(v) = self.max_positions {
            c.max_positions = v;
        }
        if let Some(v) = self.max_article_tokens {
            c.max_article_tokens = v;
        }
        if let Some(a) = self.activation {
            c.activation = match a {
                ActivationArg::Relu => Activation::Relu,
                ActivationArg::Gelu => Activation::Gelu,
            };
        }
        c.validate().map_err(|e| CliError::usage(e.to_string()))?;
        Ok(c)
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct AdamArgs {
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    #[arg(long, default_value_t = 1.0)]
    pub clip_norm: f64,
}

impl AdamArgs {
    pub fn resolve(&self) -> Result<AdamConfig> {
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.clip_norm >= 0.0) {
            return Err(CliError::usage("learning rate must be positive and clip norm nonnegative"));
        }
        Ok(AdamConfig {
            learning_rate: self.lr,
            clip_norm: (self.clip_norm > 0.0).then_some(self.clip_norm),
            ..AdamConfig::default()
        })
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BuildVocabArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value_t = 1024)]
    pub size: usize,
    #[arg(long, default_value_t = 1)]
    pub min_freq: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TokenizeArgs {
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 512)]
    pub max_tokens: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthCorpusArgs {
    #[arg(long, default_value_t = 100)]
    pub stories: usize,
    #[arg(long, default_value_t = 3)]
    pub articles: usize,
    #[arg(long, default_value_t = 12)]
    pub topic_vocab: usize,
    /// Distinct topics; defaults to one per story.
    #[arg(long)]
    pub topics: Option<usize>,
    #[arg(long, default_value_t = 30)]
    pub body_words: usize,
    #[arg(long, default_value_t = 0.15)]
    pub background_rate: f64,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct InjectNoiseArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SplitArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value_t = 0.8)]
    pub train: f64,
    #[arg(long, default_value_t = 0.1)]
    pub validation: f64,
    #[arg(long, default_value_t = 0.1)]
    pub test: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainScorerArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub adam: AdamArgs,
    #[arg(long, default_value_t = 300)]
    pub steps: usize,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1)]
    pub negative_ratio: usize,
    #[arg(long, default_value_t = 16)]
    pub max_title_tokens: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DistantLabelArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub scorer: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct MlmWarmupArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub adam: AdamArgs,
    #[arg(long, default_value_t = 500)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.15)]
    pub mask_rate: f64,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub adam: AdamArgs,
    #[arg(long, value_enum, default_value_t = Attention::SelfVoting)]
    pub attention: Attention,
    #[arg(long, value_enum, default_value_t = WeightModeArg::PerStep)]
    pub weight_mode: WeightModeArg,
    /// Use raw dot products as article scores instead of dividing by sqrt(d).
    #[arg(long)]
    pub unscaled_scores: bool,
    #[arg(long, value_enum, default_value_t = Init::Scratch)]
    pub init: Init,
    /// Encoder or model checkpoint for `--init from-checkpoint`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    pub steps: usize,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 16)]
    pub max_headline_tokens: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GenerateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Beam width; defaults to 4.
    #[arg(long, conflicts_with = "greedy")]
    pub beam: Option<usize>,
    #[arg(long)]
    pub greedy: bool,
    #[arg(long, default_value_t = 16)]
    pub max_headline_tokens: usize,
    /// Length normalization exponent for ranking finished beams.
    #[arg(long, default_value_t = 0.6)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct LcsBaselineArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct RepTitlesArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub scorer: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub predictions: PathBuf,
    /// Corpus with gold headlines.
    #[arg(long)]
    pub gold: PathBuf,
    #[arg(long, default_value_t = nhnet_core::metrics::DEFAULT_RESAMPLES)]
    pub bootstrap: usize,
    #[arg(long)]
    pub seed: u64,
    /// Also write per-example scores as CSV.
    #[arg(long)]
    pub per_example: bool,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TruecaseArgs {
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GradCheckArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Variant to check; all three when omitted.
    #[arg(long, value_enum)]
    pub attention: Option<Attention>,
    #[arg(long, default_value_t = 12)]
    pub vocab_size: usize,
    #[arg(long, default_value_t = 2)]
    pub articles: usize,
    #[arg(long, default_value_t = 3)]
    pub body_tokens: usize,
    #[arg(long, default_value_t = 2)]
    pub target_tokens: usize,
    /// Entries checked per parameter; every entry when omitted.
    #[arg(long)]
    pub entries: Option<usize>,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ParamCountArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_enum, default_value_t = Attention::SelfVoting)]
    pub attention: Attention,
    #[arg(long, default_value_t = 1024)]
    pub vocab_size: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn clap_diagnostic(e: &clap::Error) -> String {
    let text = e.to_string();
    let msg: Vec<&str> = text
        .lines()
        .map(str::trim)
        .take_while(|l| !l.is_empty() && !l.starts_with("Usage:"))
        .collect();
    msg.join(" ").trim_start_matches("error: ").to_string()
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Diagnostics go to stderr on a single line.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let args = match config::merge(args, &Cli::command()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {}", e.diagnostic());
            return e.exit_code();
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return 0;
        }
        Err(e) => {
            eprintln!("error: {}", clap_diagnostic(&e));
            return 2;
        }
    };
    match commands::execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.diagnostic());
            e.exit_code()
        }
    }
}
