use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "rlda", version, about = "Regularized linear discriminant analysis for n << p data")]
pub struct Cli {
    /// Seed for every random choice (simulation, folds, Monte Carlo).
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw the two-sample equicorrelated Gaussian design and write it as CSV.
    Simulate(SimulateArgs),
    /// Fit a classifier and save it as a JSON model document.
    Fit(FitArgs),
    /// Classify the rows of a CSV file with a saved model.
    Predict(PredictArgs),
    /// Cross-validate the shrinkage intensity and mean regularization.
    Cv(CvArgs),
    /// Run the ten-method comparison on simulated data.
    Experiment(ExperimentArgs),
    /// Monte Carlo check of estimation under rounding noise.
    QuantizeDemo(QuantizeArgs),
    /// Posterior mean of a normal mean under a conjugate prior.
    Bayes(BayesArgs),
    /// Time Cholesky against SVD classification.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Input CSV with a header row.
    #[arg(long)]
    pub data: PathBuf,
    /// Name of the group column.
    #[arg(long, default_value = "group")]
    pub label: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TargetKind {
    Identity,
    EqualCorrelation,
    Custom,
}

#[derive(Debug, Args)]
pub struct TargetArgs {
    /// Shrinkage target.
    #[arg(long, value_enum)]
    pub target: Option<TargetKind>,
    /// Off-diagonal entry of the equal-correlation target [default: 0.15].
    #[arg(long)]
    pub theta: Option<f64>,
    /// Diagonal of the equal-correlation target; defaults to the mean sample variance.
    #[arg(long)]
    pub variance: Option<f64>,
    /// Headerless CSV holding a custom p x p target.
    #[arg(long)]
    pub target_matrix: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MeanRegArg {
    None,
    L2,
    Soft,
    Hard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Algorithm {
    Chol,
    Svd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    /// Squared singular values; the exact ridge inverse.
    Exact,
    /// Column variances in place of squared singular values; requires n < p.
    Paper,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Output CSV path.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub n: usize,
    #[arg(long, default_value_t = 50)]
    pub m: usize,
    #[arg(long, default_value_t = 1000)]
    pub p: usize,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    /// Common correlation.
    #[arg(long, default_value_t = 0.4)]
    pub c: f64,
    /// Number of leading coordinates shifted in the second group.
    #[arg(long, default_value_t = 5)]
    pub shifted: usize,
    #[arg(long, default_value_t = 3.0)]
    pub shift: f64,
    #[arg(long, default_value = "group")]
    pub label: String,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value_t = Algorithm::Chol)]
    pub algorithm: Algorithm,
    /// SVD scaling (svd only).
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[command(flatten)]
    pub target: TargetArgs,
    /// Intensity in [0, 1], or `lw` for the analytic choice (chol only).
    #[arg(long, default_value = "0.5")]
    pub lambda: String,
    #[arg(long, value_enum, default_value_t = MeanRegArg::None)]
    pub mean_reg: MeanRegArg,
    /// Parameter of the mean regularizer.
    #[arg(long)]
    pub delta: Option<f64>,
    /// `empirical`, `uniform` or comma-separated probabilities.
    #[arg(long, default_value = "empirical")]
    pub priors: String,
    /// Threshold means in units of the pooled standard deviation (chol only).
    #[arg(long)]
    pub standardize: bool,
    /// Output model path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Model document written by `fit`.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Group column, if present; accuracy is reported when given.
    #[arg(long)]
    pub label: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CvArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub target: TargetArgs,
    /// `grid` or `lw`.
    #[arg(long, default_value = "grid")]
    pub lambda: String,
    /// Comma-separated intensities; defaults to 0, 0.05, ..., 1.
    #[arg(long, value_delimiter = ',')]
    pub lambda_grid: Option<Vec<f64>>,
    #[arg(long, value_enum, default_value_t = MeanRegArg::None)]
    pub mean_reg: MeanRegArg,
    /// Comma-separated delta values; defaults depend on the regularizer.
    #[arg(long, value_delimiter = ',')]
    pub delta_grid: Option<Vec<f64>>,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    /// Deal folds without regard to group.
    #[arg(long)]
    pub no_stratify: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(long, default_value_t = 50)]
    pub n: usize,
    #[arg(long, default_value_t = 50)]
    pub m: usize,
    #[arg(long, default_value_t = 1000)]
    pub p: usize,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, value_delimiter = ',')]
    pub lambda_grid: Option<Vec<f64>>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct QuantizeArgs {
    #[arg(long, default_value_t = 10)]
    pub p: usize,
    #[arg(long, default_value_t = 5)]
    pub n: usize,
    #[arg(long, default_value_t = 1.0)]
    pub sigma2: f64,
    /// Rounding-noise variance.
    #[arg(long, default_value_t = 0.5)]
    pub delta2: f64,
    /// Value of every coordinate of the fixed mean (or of theta for a random mean).
    #[arg(long, default_value_t = 0.0)]
    pub mu: f64,
    /// Treat the mean as random with covariance `psi * I`.
    #[arg(long)]
    pub psi: Option<f64>,
    #[arg(long, default_value_t = 10_000)]
    pub replications: usize,
    /// Keep every tau draw in the report.
    #[arg(long)]
    pub keep_draws: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BayesArgs {
    /// Comma-separated sample mean.
    #[arg(long, value_delimiter = ',', required = true)]
    pub xbar: Vec<f64>,
    #[arg(long)]
    pub n: usize,
    /// Likelihood covariance `sigma2 * I`.
    #[arg(long, default_value_t = 1.0)]
    pub sigma2: f64,
    /// Comma-separated prior mean; zero when omitted.
    #[arg(long, value_delimiter = ',')]
    pub theta: Option<Vec<f64>>,
    /// Prior covariance `gamma2 * I`.
    #[arg(long, conflicts_with = "c")]
    pub gamma2: Option<f64>,
    /// Prior precision `c Sigma^{-1}`.
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Comma-separated `n:p` sizes.
    #[arg(long, value_delimiter = ',', default_value = "100:200")]
    pub sizes: Vec<String>,
    #[arg(long, default_value_t = 5)]
    pub reps: usize,
    #[arg(long, default_value_t = 0.5)]
    pub lambda: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}
