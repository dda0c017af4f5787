use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Squared prediction gap (PG²) and PGI² for tree ensembles.
#[derive(Debug, Parser)]
#[command(name = "pg2", version, about)]
pub struct Cli {
    /// Worker threads (default: available parallelism). Output does not depend on it.
    #[arg(long, global = true, value_parser = clap::value_parser!(u32).range(1..))]
    pub workers: Option<u32>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute PG²(x, S) for one data point.
    Pg2(Pg2Args),
    /// Print a feature ranking per instance as CSV rows.
    Rank(RankArgs),
    /// Compare MC and QMC estimates against the exact value over random (x, S) pairs.
    Benchmark(BenchmarkArgs),
    /// Score rankings with mean PGI², feature-randomization RMSE or top-k agreement.
    Eval(EvalArgs),
    /// Convert an XGBoost JSON dump to the canonical model format.
    ConvertModel(ConvertArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelFormatArg {
    Canonical,
    Xgboost,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Model file.
    #[arg(long)]
    pub model: PathBuf,

    #[arg(long, value_enum, default_value_t = ModelFormatArg::Canonical)]
    pub model_format: ModelFormatArg,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// CSV file with a header row.
    #[arg(long)]
    pub data: Option<PathBuf>,

    /// Column holding the target; never used as a feature.
    #[arg(long)]
    pub label_column: Option<String>,

    /// Further non-feature columns.
    #[arg(long, value_delimiter = ',')]
    pub exclude_columns: Vec<String>,

    /// Apply the standardization parameters stored in this sidecar.
    #[arg(long, conflicts_with = "fit_standardization")]
    pub standardization: Option<PathBuf>,

    /// Fit standardization parameters (on the training split when
    /// `--train-ratio` is given), write them here and apply them.
    #[arg(long)]
    pub fit_standardization: Option<PathBuf>,

    /// Split the rows into train/test with this train fraction and work on the test rows.
    #[arg(long)]
    pub train_ratio: Option<f64>,

    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct PerturbationArgs {
    /// Standard deviation of the Gaussian noise added to every perturbed feature.
    #[arg(long, conflicts_with = "perturbation")]
    pub sigma: Option<f64>,

    /// JSON file with a perturbation spec, e.g. `{"all": {"kind": "uniform", "half_width": 0.5}}`.
    #[arg(long)]
    pub perturbation: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Exact,
    Mc,
    Qmc,
}

#[derive(Debug, Clone, Args)]
pub struct Pg2Args {
    #[command(flatten)]
    pub model: ModelArgs,

    #[command(flatten)]
    pub data: DataArgs,

    /// Row of the (test) data to explain.
    #[arg(long, conflicts_with = "point")]
    pub point_index: Option<usize>,

    /// The data point itself as comma-separated values.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub point: Option<Vec<f64>>,

    /// Perturbed feature indices, comma-separated; empty for S = ∅.
    #[arg(long, value_delimiter = ',', default_value = "")]
    pub features: Vec<String>,

    #[command(flatten)]
    pub perturbation: PerturbationArgs,

    #[arg(long, value_enum, default_value_t = Method::Exact)]
    pub method: Method,

    #[arg(long, default_value_t = 10_000)]
    pub iterations: u64,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Estimate E|f(x') - f(x)| instead of the squared gap (mc and qmc only).
    #[arg(long)]
    pub absolute: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RankMethod {
    GreedyPg2,
    FromAttribution,
}

#[derive(Debug, Clone, Args)]
pub struct RankArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,

    #[arg(long, value_enum, default_value_t = ModelFormatArg::Canonical)]
    pub model_format: ModelFormatArg,

    #[command(flatten)]
    pub data: DataArgs,

    #[command(flatten)]
    pub perturbation: PerturbationArgs,

    #[arg(long, value_enum, default_value_t = RankMethod::GreedyPg2)]
    pub method: RankMethod,

    /// Attribution vectors (headerless CSV or JSON array of arrays).
    #[arg(long)]
    pub attributions: Option<PathBuf>,

    /// Write the rankings here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub const DEFAULT_ITERATION_GRID: &[u64] = &[
    100, 500, 1000, 2000, 4000, 6000, 8000, 10000, 15000, 20000, 25000, 30000, 35000,
];

#[derive(Debug, Clone, Args)]
pub struct BenchmarkArgs {
    #[command(flatten)]
    pub model: ModelArgs,

    #[command(flatten)]
    pub data: DataArgs,

    /// Gaussian noise levels.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub sigmas: Vec<f64>,

    /// Iteration counts for the samplers.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_ITERATION_GRID.to_vec())]
    pub iterations: Vec<u64>,

    /// Number of random (x, S) pairs.
    #[arg(long, default_value_t = 20_000)]
    pub pairs: usize,

    /// Subset sizes to cycle through (default 1..=d).
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,

    /// Independent MC runs per pair.
    #[arg(long, default_value_t = 1)]
    pub repetitions: u64,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// JSON report destination (default stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Plot data with columns method,iterations,sigma,nmae.
    #[arg(long)]
    pub csv: Option<PathBuf>,

    /// Record wall-clock times in the report. Makes the output machine dependent.
    #[arg(long)]
    pub with_timings: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Metric {
    Pgi2,
    RandomizeRmse,
    TopkAgreement,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RmseReferenceArg {
    Prediction,
    Labels,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PrefixMatchArg {
    Set,
    Sequence,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub model: ModelArgs,

    #[command(flatten)]
    pub data: DataArgs,

    /// Precomputed rankings, one permutation per line.
    #[arg(long, conflicts_with_all = ["attributions"])]
    pub rankings: Option<PathBuf>,

    /// Rank by |attribution| instead of the greedy PG² ranking.
    #[arg(long)]
    pub attributions: Option<PathBuf>,

    /// σ for building the greedy ranking.
    #[arg(long, conflicts_with = "perturbation_rank")]
    pub sigma_rank: Option<f64>,

    #[arg(long)]
    pub perturbation_rank: Option<PathBuf>,

    /// σ' for the PGI² metric.
    #[arg(long, conflicts_with = "perturbation_metric")]
    pub sigma_metric: Option<f64>,

    #[arg(long)]
    pub perturbation_metric: Option<PathBuf>,

    #[arg(long, value_enum, default_value_t = Metric::Pgi2)]
    pub metric: Metric,

    /// Number of top-ranked features randomized or compared.
    #[arg(short, long)]
    pub k: Option<usize>,

    /// Draws per instance for feature randomization.
    #[arg(long, default_value_t = prediction_gap::metrics::DEFAULT_RANDOMIZATION_SAMPLES)]
    pub samples: usize,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    #[arg(long, value_enum, default_value_t = RmseReferenceArg::Prediction)]
    pub rmse_reference: RmseReferenceArg,

    /// Rankings to compare against for top-k agreement.
    #[arg(long)]
    pub reference_rankings: Option<PathBuf>,

    #[arg(long, value_enum, default_value_t = PrefixMatchArg::Set)]
    pub prefix_match: PrefixMatchArg,
}

#[derive(Debug, Clone, Args)]
pub struct ConvertArgs {
    /// XGBoost JSON dump.
    #[arg(long)]
    pub input: PathBuf,

    /// Canonical model destination (default stdout).
    #[arg(long)]
    pub output: Option<PathBuf>,

    /// Global bias added to every prediction.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub base_score: f64,

    #[arg(long)]
    pub num_features: Option<usize>,

    /// Feature names used by the dump's split conditions, in column order.
    #[arg(long, value_delimiter = ',')]
    pub feature_names: Option<Vec<String>>,
}
