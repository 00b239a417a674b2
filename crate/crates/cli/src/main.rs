//! `vgs`: generate synthetic corpora, mine pairs, train and evaluate
//! visually grounded speech models.
//!
//! Exit codes: 0 on success, 1 on a validation or configuration error
//! (including bad flags), 2 on an I/O error.

mod commands;
mod heatmap;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use vgs_core::{MeVariant, Split};

#[derive(Parser, Debug)]
#[command(name = "vgs", version, about = "Visually grounded few-shot word learning toolkit")]
struct Cli {
    /// Upper bound on worker threads for mining and evaluation.
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic dataset with ground-truth alignments.
    GenerateData(GenerateArgs),
    /// Check a dataset directory against its manifest.
    Validate(ValidateArgs),
    /// Mine word-image pairs for the familiar classes from a support set.
    Mine(MineArgs),
    /// Run the staged training pipeline and write checkpoints.
    Train(TrainArgs),
    /// Few-shot classification and retrieval.
    EvalFewshot(EvalFewshotArgs),
    /// Visually prompted keyword detection and localisation.
    EvalVpkl(EvalVpklArgs),
    /// Mutual exclusivity trials.
    MeTest(MeTestArgs),
    /// Word-to-image attention heatmaps as PNG files.
    PlotAttention(PlotAttentionArgs),
}

#[derive(Args, Debug)]
pub struct OutArgs {
    /// Output directory; defaults to $VGS_OUT_DIR, then ./vgs-out.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// 13 familiar, 20 novel and 8 background classes in three languages.
    Default,
    /// 4 familiar, 4 novel and 16 background classes in English.
    Desk,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Generator configuration as JSON; absent fields take their defaults.
    #[arg(long, value_name = "FILE", conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Preset::Default)]
    pub preset: Preset,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Args, Debug)]
pub struct ValidateArgs {
    /// Dataset directory holding `manifest.json`.
    pub dir: PathBuf,
    /// Also write the report here.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct DataArgs {
    /// Dataset directory.
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    #[arg(long, default_value = "english")]
    pub language: String,
}

#[derive(Args, Debug)]
pub struct MineArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Support pairs per class.
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Pairs to mine per class.
    #[arg(long, default_value_t = 50)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset directory.
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    /// Pipeline configuration as JSON; absent fields take their defaults.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Overrides the configuration's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Fine-tune on ground-truth pairs instead of mined ones.
    #[arg(long)]
    pub ground_truth: bool,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Builtin {
    /// Hash-based scores, exchangeable across images.
    Random,
    /// Projections onto the generator's familiar-class prototypes.
    Oracle,
}

#[derive(Args, Debug)]
pub struct ModelArgs {
    /// Trained checkpoint (`.mmt` with its `.json` sidecar).
    #[arg(long, value_name = "FILE")]
    pub checkpoint: Option<PathBuf>,
    /// Reference model used when no checkpoint is given.
    #[arg(long, value_enum, default_value_t = Builtin::Random, conflicts_with = "checkpoint")]
    pub model: Builtin,
}

#[derive(Args, Debug)]
pub struct EvalFewshotArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Args, Debug)]
pub struct EvalVpklArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Localisation fraction in (0, 1].
    #[arg(long, default_value_t = 0.5)]
    pub tau: f64,
    /// Detection threshold; selected on the dev split when absent.
    #[arg(long)]
    pub theta: Option<f64>,
    /// Image queries per familiar class.
    #[arg(long, default_value_t = 3)]
    pub queries_per_class: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Clone, Copy, Debug)]
pub enum VariantChoice {
    All,
    One(MeVariant),
}

fn parse_variant(s: &str) -> Result<VariantChoice, String> {
    if s == "all" {
        return Ok(VariantChoice::All);
    }
    s.parse::<MeVariant>().map(VariantChoice::One).map_err(|e| e.to_string())
}

#[derive(Args, Debug)]
pub struct MeTestArgs {
    /// Dataset directory; without one, a default-shape dataset is generated
    /// in memory from `--seed`.
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "english")]
    pub language: String,
    #[command(flatten)]
    pub model: ModelArgs,
    /// A variant name, or `all`.
    #[arg(long, default_value = "all", value_parser = parse_variant)]
    pub variant: VariantChoice,
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Dev,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Dev => Split::Dev,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Args, Debug)]
pub struct PlotAttentionArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Word item id; pairs with `--image`.
    #[arg(long, requires = "image")]
    pub word: Option<String>,
    /// Image item id; pairs with `--word`.
    #[arg(long, requires = "word")]
    pub image: Option<String>,
    /// Number of same-class pairs to draw when no ids are given.
    #[arg(long, default_value_t = 4)]
    pub pairs: usize,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    #[command(flatten)]
    pub out: OutArgs,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
