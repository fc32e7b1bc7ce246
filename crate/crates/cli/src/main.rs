//! `ustar`: generate streams, train embeddings, evaluate retrieval and run
//! the corpus studies.
//!
//! Exit codes: 0 on success, 1 on usage or configuration errors, 2 on data
//! errors.

mod commands;
mod config;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ustar_core::train::{GeoCache, NegativeDist, Variant};

use crate::config::Layer;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Data(format!("{}: {e}", path.display()))
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

impl From<ustar_core::Error> for CliError {
    fn from(e: ustar_core::Error) -> Self {
        match e {
            ustar_core::Error::Config(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "ustar",
    version,
    about = "Online embeddings of regions, hours, keywords and users"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic stream with planted clusters.
    Gen(GenArgs),
    /// Train on a record stream, writing one snapshot per step.
    Train(TrainArgs),
    /// Evaluate region and keyword retrieval against baselines.
    Eval(EvalArgs),
    /// Print the weak-label region distribution for one record.
    InferGeo(InferGeoArgs),
    /// Corpus studies and region drift.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
    /// Write the embeddings of a snapshot as TSV.
    Export(ExportArgs),
}

#[derive(Debug, Subcommand)]
enum AnalyzeCommand {
    /// Content-vs-visits and time-vs-space homophily tests.
    Homophily(HomophilyArgs),
    /// Distance of a region's vector from its recent running mean.
    Drift(DriftArgs),
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long, default_value_t = 5)]
    clusters: usize,
    #[arg(long, default_value_t = 50_000)]
    records: usize,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    /// Fraction of records that keep their coordinates.
    #[arg(long, default_value_t = 1.0)]
    g: f64,
    /// Length of the stream in days.
    #[arg(long, default_value_t = 7)]
    days: i64,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Where to write the planted ground truth as JSON.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Write a config file holding the generator's grid.
    #[arg(long)]
    write_config: Option<PathBuf>,
}

/// Options that shape how records are read and discretized.
#[derive(Debug, Args)]
struct DataArgs {
    /// Flat TOML config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Stream step, e.g. `1h` or `30m`.
    #[arg(long)]
    step: Option<String>,
    #[arg(long)]
    cell_m: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    tz_offset_min: Option<i32>,
    #[arg(long)]
    time_bins: Option<u16>,
    #[arg(long)]
    min_freq: Option<u64>,
    /// Derive the bounding box from the input with 1% padding.
    #[arg(long)]
    bbox_from_data: bool,
}

fn parse_neg_dist(s: &str) -> Result<NegativeDist, String> {
    match s {
        "uniform" => Ok(NegativeDist::Uniform),
        "unigram75" => Ok(NegativeDist::Unigram75),
        _ => Err(format!("expected `uniform` or `unigram75`, got `{s}`")),
    }
}

fn parse_geo_cache(s: &str) -> Result<GeoCache, String> {
    match s {
        "none" => Ok(GeoCache::None),
        "per-step" => Ok(GeoCache::PerStep),
        _ => Err(format!("expected `none` or `per-step`, got `{s}`")),
    }
}

/// Training hyperparameters.
#[derive(Debug, Args)]
struct ModelArgs {
    /// Embedding dimension.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    eta: Option<f32>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Negative samples per positive.
    #[arg(long)]
    neg_k: Option<usize>,
    #[arg(long, value_parser = parse_neg_dist)]
    neg_dist: Option<NegativeDist>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    c_u: Option<f64>,
    #[arg(long, value_parser = parse_geo_cache)]
    geo_cache: Option<GeoCache>,
    /// Compute each record's intra-agreement once instead of every sweep.
    #[arg(long)]
    cache_z: bool,
    /// Skip weak geolocation: non-geotagged records train without a region.
    #[arg(long, conflicts_with = "base")]
    semi: bool,
    /// Train on geotagged records only.
    #[arg(long)]
    base: bool,
}

impl DataArgs {
    fn layer(&self) -> Layer {
        Layer {
            seed: self.seed,
            step: self.step.clone(),
            cell_m: self.cell_m,
            tz_offset_min: self.tz_offset_min,
            time_bins: self.time_bins,
            min_freq: self.min_freq,
            ..Layer::default()
        }
    }
}

impl ModelArgs {
    fn layer(&self) -> Layer {
        let variant = if self.semi {
            Some(Variant::Semi)
        } else if self.base {
            Some(Variant::Base)
        } else {
            None
        };
        Layer {
            k: self.k,
            eta: self.eta,
            epochs: self.epochs,
            neg_k: self.neg_k,
            neg_dist: self.neg_dist,
            tau: self.tau,
            c_u: self.c_u,
            geo_cache: self.geo_cache,
            cache_z: self.cache_z.then_some(true),
            variant,
            ..Layer::default()
        }
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    input: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    input: PathBuf,
    /// Report path (JSON).
    #[arg(long)]
    out: PathBuf,
    /// Fraction of records that keep their location during training.
    #[arg(long)]
    g: Option<f64>,
    /// Number of query windows.
    #[arg(long)]
    windows: Option<usize>,
    /// Negatives per candidate pool.
    #[arg(long)]
    m: Option<usize>,
    /// Learning variants to evaluate: ustar, ustar-base, ustar-semi.
    #[arg(long, value_delimiter = ',', default_value = "ustar")]
    methods: Vec<String>,
    /// Baselines to run on the same pools: tfidf, tfidf-user.
    #[arg(long, value_delimiter = ',')]
    baseline: Vec<String>,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Debug, Args)]
struct InferGeoArgs {
    /// One record in the JSONL input format.
    #[arg(long)]
    record: String,
    #[arg(long)]
    snapshot: PathBuf,
    /// Buffered records (`buffer.jsonl` from `train`).
    #[arg(long)]
    buffer: PathBuf,
    /// Vocabulary sidecar; defaults to `vocab.tsv` beside the buffer.
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    c_u: Option<f64>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct HomophilyArgs {
    #[arg(long)]
    input: PathBuf,
    /// Report path (JSON).
    #[arg(long)]
    out: PathBuf,
    /// Neighbors and non-neighbors per user.
    #[arg(long, default_value_t = 10)]
    n: usize,
    /// Users to sample.
    #[arg(long, default_value_t = 5_000)]
    users: usize,
    /// Time bin for the time-vs-space study.
    #[arg(long, default_value = "1h")]
    bin: String,
    /// Pairs per group in the time-vs-space study.
    #[arg(long, default_value_t = 100_000)]
    pairs: usize,
    /// Great-circle meters instead of degree distance.
    #[arg(long)]
    meters: bool,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Debug, Args)]
struct DriftArgs {
    /// Directory of snapshots, read in file-name order.
    #[arg(long)]
    snapshots: PathBuf,
    #[arg(long)]
    region: u32,
    /// Window as a snapshot count or a duration such as `30d`.
    #[arg(long, default_value = "30d")]
    window: String,
    /// Time between snapshots.
    #[arg(long, default_value = "1h")]
    step: String,
    /// Series path (CSV `step,delta`).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[arg(long)]
    snapshot: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// TSV path: modality, name, then the vector.
    #[arg(long)]
    out: PathBuf,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Gen(a) => commands::gen(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::InferGeo(a) => commands::infer_geo(a),
        Command::Analyze(AnalyzeCommand::Homophily(a)) => commands::homophily(a),
        Command::Analyze(AnalyzeCommand::Drift(a)) => commands::drift(a),
        Command::Export(a) => commands::export(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
