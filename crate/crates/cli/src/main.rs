//! `geomret`: build, query, evaluate and benchmark signature indices.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand};
use geomret::MetricKind;

#[derive(Debug, Parser)]
#[command(
    name = "geomret",
    version,
    about = "Distribution-signature retrieval over deep feature matrices"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a signature index from a manifest of DFV1 feature files.
    Build(BuildArgs),
    /// Rank an index against the features in one DFV1 file.
    Query(QueryArgs),
    /// Precision and MAP of a query manifest against an index.
    Evaluate(EvaluateArgs),
    /// Write a labelled synthetic dataset as DFV1 files plus manifest.tsv.
    GenSynthetic(GenArgs),
    /// Time distance evaluations on seeded random entry pairs.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlphaArg {
    Cv,
    Fixed(f64),
}

fn parse_alpha(s: &str) -> Result<AlphaArg, String> {
    if s.eq_ignore_ascii_case("cv") {
        return Ok(AlphaArg::Cv);
    }
    match s.parse::<f64>() {
        Ok(a) if (0.0..=1.0).contains(&a) => Ok(AlphaArg::Fixed(a)),
        _ => Err(format!("expected `cv` or a number in [0, 1], got `{s}`")),
    }
}

fn parse_metric(s: &str) -> Result<MetricKind, String> {
    s.parse::<MetricKind>().map_err(|e| e.to_string())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cutoffs(pub Vec<usize>);

fn parse_cutoffs(s: &str) -> Result<Cutoffs, String> {
    let mut out = Vec::new();
    for part in s.split(',') {
        match part.trim().parse::<usize>() {
            Ok(c) if c >= 1 => out.push(c),
            _ => return Err(format!("cutoffs must be positive integers, got `{part}`")),
        }
    }
    out.sort_unstable();
    out.dedup();
    Ok(Cutoffs(out))
}

fn parse_nonneg(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(x) if x >= 0.0 && x.is_finite() => Ok(x),
        _ => Err(format!("expected a finite number >= 0, got `{s}`")),
    }
}

fn parse_anisotropy(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(x) if x >= 1.0 && x.is_finite() => Ok(x),
        _ => Err(format!("expected a finite number >= 1, got `{s}`")),
    }
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("mode").required(true).args(["gmm", "smt", "sample"])))]
pub struct BuildArgs {
    /// Manifest: item_id TAB category TAB feature_file per line.
    manifest: PathBuf,
    /// Moment-matched diagonal GMM signatures (keeps the mixtures).
    #[arg(long)]
    gmm: bool,
    /// Shrunk SMT covariance signatures.
    #[arg(long)]
    smt: bool,
    /// Plain sample mean and covariance.
    #[arg(long)]
    sample: bool,
    /// GMM components per item [default: 64].
    #[arg(long, conflicts_with_all = ["smt", "sample"], value_parser = clap::value_parser!(u32).range(1..))]
    components: Option<u32>,
    /// Number of Givens rotations [default: round(2·D·log2 D)].
    #[arg(long, conflicts_with_all = ["gmm", "sample"])]
    smt_order: Option<usize>,
    /// Shrinkage weight in [0, 1], or `cv` to pick it by cross-validation [default: cv].
    #[arg(long, conflicts_with_all = ["gmm", "sample"], value_parser = parse_alpha)]
    alpha: Option<AlphaArg>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// ℓ2-normalise every feature row first.
    #[arg(long)]
    normalize_rows: bool,
    /// Output index path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    index: PathBuf,
    /// DFV1 feature file of the query item.
    features: PathBuf,
    #[arg(long, default_value = "wasserstein", value_parser = parse_metric)]
    metric: MetricKind,
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    top: u64,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    index: PathBuf,
    /// Query manifest; queries whose id is in the index are left out of their own ranking.
    queries: PathBuf,
    /// Single metric; every metric applicable to the index when omitted.
    #[arg(long, value_parser = parse_metric)]
    metric: Option<MetricKind>,
    #[arg(long, default_value = "1,5,10", value_parser = parse_cutoffs)]
    cutoffs: Cutoffs,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(1..))]
    categories: u64,
    /// Items per category.
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    items: u64,
    /// Feature rows per item.
    #[arg(long, default_value_t = 500, value_parser = clap::value_parser!(u64).range(1..))]
    rows: u64,
    #[arg(long, default_value_t = 16, value_parser = clap::value_parser!(u32).range(1..))]
    dim: u32,
    #[arg(long, default_value_t = 8.0, value_parser = parse_nonneg)]
    separation: f64,
    #[arg(long, default_value_t = 4.0, value_parser = parse_anisotropy)]
    anisotropy: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    index: PathBuf,
    #[arg(long, default_value = "wasserstein", value_parser = parse_metric)]
    metric: MetricKind,
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    pairs: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Build(a) => commands::build(a),
        Command::Query(a) => commands::query(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::GenSynthetic(a) => commands::gen_synthetic(a),
        Command::Bench(a) => commands::bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
