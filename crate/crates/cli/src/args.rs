use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "modalreg", version, about = "Nonparametric modal regression")]
pub struct Cli {
    /// Cap on worker threads; results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a modal (or baseline) regression curve on a grid.
    Fit(FitArgs),
    /// Fit varying-coefficient functions on a grid of the index variable.
    VcFit(VcFitArgs),
    /// Plug-in bandwidths and the constants behind them, as JSON.
    Bandwidth(BandwidthArgs),
    /// Draw a dataset from a simulation scenario.
    Simulate(SimulateArgs),
    /// Monte-Carlo coverage of prediction intervals.
    Coverage(CoverageArgs),
    /// Monte-Carlo check of the asymptotic bias and variance.
    TheoryCheck(TheoryArgs),
    /// Cross-validated mean squared prediction error.
    Cv(CvArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BandwidthMode {
    Plugin,
    Manual,
    Cv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioName {
    Example1,
    Vc1,
    Vc2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Convention {
    /// `[c − wσ, c + wσ]`
    Half,
    /// `[c − wσ/2, c + wσ/2]`
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Curvature {
    Bias,
    Derivative,
}

/// Modal EM settings shared by every fitting command.
#[derive(Debug, Clone, Args, Serialize)]
pub struct EmArgs {
    #[arg(long, default_value = "epanechnikov")]
    pub kernel: String,
    /// Local polynomial order.
    #[arg(long, default_value_t = 1)]
    pub order: usize,
    #[arg(long, default_value_t = 500)]
    pub max_iter: usize,
    /// Relative objective change below which EM may stop.
    #[arg(long, default_value_t = 1e-8)]
    pub tol_obj: f64,
    /// Coefficient change below which EM may stop.
    #[arg(long, default_value_t = 1e-6)]
    pub tol_param: f64,
    #[arg(long, default_value_t = 5)]
    pub starts: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FitArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, default_value = "llmr")]
    pub method: String,
    /// Defaults to `manual` when `--h1` is given, otherwise `plugin` (`cv` for baselines).
    #[arg(long, value_enum)]
    pub bandwidth: Option<BandwidthMode>,
    /// Design bandwidth (the only bandwidth of a baseline).
    #[arg(long)]
    pub h1: Option<f64>,
    /// Response bandwidth.
    #[arg(long)]
    pub h2: Option<f64>,
    /// Evaluation grid `a:b:k`; defaults to 200 points across the data range.
    #[arg(long)]
    pub grid: Option<String>,
    /// Estimate the `v`-th derivative of the mode curve.
    #[arg(long, default_value_t = 0)]
    pub derivative: usize,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub em: EmArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct VcFitArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, default_value = "llmr")]
    pub method: String,
    #[arg(long, value_enum)]
    pub bandwidth: Option<BandwidthMode>,
    #[arg(long)]
    pub h1: Option<f64>,
    #[arg(long)]
    pub h2: Option<f64>,
    /// Grid over the index variable `a:b:k`; defaults to 200 points across its range.
    #[arg(long)]
    pub grid: Option<String>,
    #[arg(long, value_enum, default_value = "bias")]
    pub vc_curvature: Curvature,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub em: EmArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BandwidthArgs {
    /// Scalar (`x,y`) or varying-coefficient (`u,x1,…,xp,y`) dataset.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "bias")]
    pub vc_curvature: Curvature,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub em: EmArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub scenario: ScenarioName,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Replace the heteroscedastic error by a mode-centred one with this scale.
    #[arg(long)]
    pub homoscedastic: Option<f64>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CoverageArgs {
    #[arg(long, value_enum, default_value = "example1")]
    pub scenario: ScenarioName,
    #[arg(long)]
    pub homoscedastic: Option<f64>,
    /// Comma-separated methods.
    #[arg(long = "method", value_delimiter = ',', default_value = "ll,lm,lmd,llmr")]
    pub methods: Vec<String>,
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    /// Defaults to 100 (scalar) or 50 (varying-coefficient).
    #[arg(long)]
    pub reps: Option<usize>,
    /// Interval widths in σ units.
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.5")]
    pub widths: Vec<f64>,
    /// Scalar grid size, or points per axis for varying-coefficient scenarios.
    #[arg(long)]
    pub grid_size: Option<usize>,
    #[arg(long, value_enum, default_value = "half")]
    pub convention: Convention,
    #[arg(long, default_value_t = 2.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, value_enum, default_value = "bias")]
    pub vc_curvature: Curvature,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub em: EmArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TheoryArgs {
    #[arg(long, value_enum, default_value = "example1")]
    pub scenario: ScenarioName,
    /// Error scale of the homoscedastic variant the theory is checked on.
    #[arg(long, default_value_t = 2.0)]
    pub homoscedastic: f64,
    /// Design point (x₀ or u₀).
    #[arg(long, default_value_t = 0.5)]
    pub at: f64,
    #[arg(long, default_value_t = 20_000)]
    pub n: usize,
    /// Defaults to the reference pair scaled at the n^(-1/8) rate.
    #[arg(long)]
    pub h1: Option<f64>,
    #[arg(long)]
    pub h2: Option<f64>,
    /// Defaults to 400 (scalar) or 200 (varying-coefficient).
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub em: EmArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CvArgs {
    /// Scalar dataset; without it one is simulated from `--scenario`.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "example1")]
    pub scenario: ScenarioName,
    #[arg(long, default_value_t = 500)]
    pub n: usize,
    #[arg(long = "method", value_delimiter = ',', default_value = "ll,lm,lmd,llmr")]
    pub methods: Vec<String>,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    /// Monte-Carlo splits holding out n/folds each, instead of one k-fold partition.
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub em: EmArgs,
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn comma_lists_and_global_threads() {
        let cli = Cli::try_parse_from([
            "modalreg", "coverage", "--method", "llmr,ll", "--widths", "0.5", "--seed", "3", "--threads", "2",
        ])
        .unwrap();
        assert_eq!(cli.threads, Some(2));
        let Command::Coverage(a) = cli.command else { panic!() };
        assert_eq!(a.methods, ["llmr", "ll"]);
        assert_eq!(a.widths, [0.5]);
        assert_eq!(a.seed, Some(3));
        assert_eq!(a.reps, None);
    }
}
