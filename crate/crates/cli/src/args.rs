use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use vdea::data::SplitKind;
use vdea::eval::SweepAxis;
use vdea::trainer::Variant;

#[derive(Debug, Parser)]
#[command(
    name = "vdea",
    version,
    about = "Cross-domain recommendation with dual variational autoencoders"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Turn two rating CSVs into binary interaction matrices.
    Ingest(IngestArgs),
    /// Generate a planted-cluster dataset with overlap and splits.
    Synth(SynthArgs),
    /// Reveal overlapped users and split the interactions of ingested matrices.
    Build(BuildArgs),
    /// Train a model.
    Train(TrainArgs),
    /// Rank held-out interactions with a trained model.
    Eval(EvalArgs),
    /// Train and evaluate a one-axis sweep of configurations.
    Ablate(AblateArgs),
    /// Write each user's posterior mean as TSV.
    ExportEmbeddings(ExportArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Source-domain ratings, `user_id,item_id,rating` with a header.
    #[arg(long, value_name = "FILE")]
    pub source: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub target: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Ratings at or above this value count as positives.
    #[arg(long, default_value_t = 4.0)]
    pub min_rating: f64,
    /// Users and items with fewer positives are dropped.
    #[arg(long, default_value_t = 5)]
    pub min_interactions: usize,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long)]
    pub clusters: Option<usize>,
    /// Users per domain.
    #[arg(long)]
    pub users: Option<usize>,
    /// Items per domain; `--target-items` overrides the target side.
    #[arg(long)]
    pub items: Option<usize>,
    #[arg(long)]
    pub target_items: Option<usize>,
    /// Share of shared users revealed as overlapped.
    #[arg(long, value_name = "RATIO")]
    pub ku: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub source_density: Option<f64>,
    #[arg(long)]
    pub target_density: Option<f64>,
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    /// Output directory of `ingest`.
    #[arg(long, value_name = "DIR")]
    pub source_data: PathBuf,
    #[arg(long, value_name = "RATIO")]
    pub ku: f64,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

/// Flags that override keys of the run configuration file.
#[derive(Debug, Default, Args)]
pub struct ConfigArgs {
    /// Flat JSON run configuration.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Dataset directory written by `synth` or `build`.
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub data_seed: Option<u64>,
    #[arg(long)]
    pub model_seed: Option<u64>,
    #[arg(long)]
    pub noise_seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: ConfigArgs,
    #[arg(long, value_parser = parse_variant)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum EvalSplit {
    Val,
    Test,
}

impl From<EvalSplit> for SplitKind {
    fn from(s: EvalSplit) -> Self {
        match s {
            EvalSplit::Val => SplitKind::Val,
            EvalSplit::Test => SplitKind::Test,
        }
    }
}

#[derive(Debug, Args)]
pub struct ProtocolArgs {
    /// Cutoff of HR@k and NDCG@k.
    #[arg(long)]
    pub k: Option<usize>,
    /// Sampled unobserved items ranked against each positive.
    #[arg(long)]
    pub negatives: Option<usize>,
    #[arg(long)]
    pub protocol_seed: Option<u64>,
    /// Rank against every unobserved item instead of a sample.
    #[arg(long)]
    pub full_catalog: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: ConfigArgs,
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub split: EvalSplit,
    #[command(flatten)]
    pub protocol: ProtocolArgs,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: ConfigArgs,
    /// variant, lambda_vl, lambda_vg, k, d or k_u.
    #[arg(long, value_parser = parse_axis)]
    pub sweep: SweepAxis,
    /// Comma-separated values of the swept axis.
    #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
    pub values: Vec<String>,
    #[arg(long, value_enum, default_value = "test")]
    pub split: EvalSplit,
    /// Cells trained at the same time.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    pub jobs: u32,
    #[command(flatten)]
    pub protocol: ProtocolArgs,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    /// TSV destination; the manifest goes to `<FILE>.manifest.json`.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: vdea::Error| e.to_string())
}

fn parse_axis(s: &str) -> Result<SweepAxis, String> {
    s.parse().map_err(|e: vdea::Error| e.to_string())
}
