//! Command-line surface.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

const CONFIG_REFERENCE: &str = "\
CONFIG FILE KEYS (TOML):
  seed                  u64     base seed; every random stream derives from it
  policy                string  cas | sat | eat | order | avg
  horizon               u64     iterations to run
  output_dir            path    where artifacts go (overridden by --out)
  [env]
    dimension           usize   parameter-space dimension
    conflict            f64     0 = shared risk minimizers, 1 = fully opposed
    learning_rate       f64     gradient step size
    beta                f64     hybrid-loss weight on the adversarial term (default 8/9)
    noise_scale         f64     log-normal observation noise scale (default 0)
    risk_seed           u64     risk-surface generation seed (default: seed)
  [scheduler]
    alpha               f64     reward exponent scale (default 10)
    window              usize   sliding-window length for the self reward (default 20)
  [[arms]]                      one block per perturbation type
    id                  usize   contiguous from 0
    weight              f64     importance weight (default 1)
    epsilon             f64 | \"calibrate\"   attack strength (default 1)
    lambda              f64     calibration hyperparameter (default 0.5)

Unknown keys are rejected. Identical config + seed reproduces every trace
byte for byte.

EXIT CODES: 0 success, 1 usage or config error, 2 numerical divergence,
3 failed *-check verdict.";

#[derive(Parser)]
#[command(
    name = "cas",
    version,
    about = "Calibrated adversarial sampling simulator and experiment runner",
    after_long_help = CONFIG_REFERENCE
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Run one policy against a seeded environment; writes trace.csv,
    /// summary.json, and config_echo.toml
    #[command(after_long_help = CONFIG_REFERENCE)]
    Run(RunArgs),
    /// Run several configs over paired repeat seeds and tabulate mean and
    /// standard deviation of the weighted accuracy
    Compare(CompareArgs),
    /// Sequential fine-tuning trade-off matrix plus aggregate statistics
    TradeoffMatrix(TradeoffArgs),
    /// UCB and Thompson empirical regret against the logarithmic bound
    RegretBench(RegretArgs),
    /// Stochastic-approximation check: 1/t converges, 1/t^2 stalls
    ConvergenceCheck(ConvergenceArgs),
    /// Frozen-reward selection frequencies against w * exp(alpha R)
    EquilibriumCheck(EquilibriumArgs),
    /// Two-phase fine-tuning drift against the safe-drift threshold
    DriftDemo(DriftArgs),
}

#[derive(Args)]
pub struct CommonArgs {
    /// Run configuration file (TOML)
    #[arg(long)]
    pub config: PathBuf,
    /// Override the configuration's seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (overrides the configuration's output_dir)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Args)]
pub struct CompareArgs {
    /// Configuration files sharing environment, arms, horizon, and seed
    /// (repeat the flag once per policy)
    #[arg(long = "config", required = true)]
    pub configs: Vec<PathBuf>,
    /// Override every configuration's seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (overrides the first configuration's output_dir)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Independent repeats per config, each on a derived seed
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
}

#[derive(Args)]
pub struct TradeoffArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Training steps per matrix row
    #[arg(long, default_value_t = 300)]
    pub epochs: usize,
    /// Carry parameters across rows instead of resetting to the checkpoint
    #[arg(long)]
    pub cumulative: bool,
}

#[derive(Args)]
pub struct RegretArgs {
    /// Base seed for the repeat sweep
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Bandit horizon T
    #[arg(long, default_value_t = 10_000)]
    pub horizon: usize,
    /// Independent runs per algorithm
    #[arg(long, default_value_t = 30)]
    pub runs: usize,
    /// Per-arm Bernoulli means, comma separated
    #[arg(long, default_value = "0.9,0.1")]
    pub means: String,
}

#[derive(Args)]
pub struct ConvergenceArgs {
    /// Base seed for the repeat sweep
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seeds that must all converge (and all stall on the invalid schedule)
    #[arg(long, default_value_t = 20)]
    pub seeds: usize,
    /// SGD horizon T
    #[arg(long, default_value_t = 100_000)]
    pub horizon: u64,
}

#[derive(Args)]
pub struct EquilibriumArgs {
    /// Base seed for the repeat sweep
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Frozen per-arm rewards, comma separated
    #[arg(long, default_value = "0.08,0.03,0,-0.03,-0.08")]
    pub rewards: String,
    /// Per-arm importance weights, comma separated
    #[arg(long, default_value = "6,1,1,2,1")]
    pub weights: String,
    /// Reward exponent scale
    #[arg(long, default_value_t = 10.0)]
    pub alpha: f64,
    /// Selection draws per seed
    #[arg(long, default_value_t = 100_000)]
    pub draws: usize,
    /// Seeds averaged before the per-arm comparison
    #[arg(long, default_value_t = 10)]
    pub seeds: usize,
    /// Maximum absolute per-arm frequency deviation
    #[arg(long, default_value_t = 0.02)]
    pub tolerance: f64,
}

#[derive(Args)]
pub struct DriftArgs {
    /// Optional run configuration supplying the environment section
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed (overrides the configuration's seed)
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Center rotation between the two risks when no config is given
    #[arg(long, default_value_t = 0.8)]
    pub conflict: f64,
    /// Steps of the first fine-tuning phase
    #[arg(long, default_value_t = 80)]
    pub phase_p: usize,
    /// Steps of the second fine-tuning phase
    #[arg(long, default_value_t = 120)]
    pub phase_q: usize,
}
