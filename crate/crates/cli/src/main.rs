//! `countstat`: command-line access to the counting-experiment toolkit.

mod commands;
mod model_file;
mod output;

use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use output::Format;

#[derive(Debug, Parser)]
#[command(
    name = "countstat",
    version,
    about = "Limits, significances, coverage and fit tests for Poisson counting experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Model file (TOML keys b_mean, b_rel_sigma, b_form, eff_mean, eff_rel_sigma, eff_form, tau).
    #[arg(long, global = true)]
    pub model: Option<String>,
    /// Seed for every random stream; required by stochastic commands.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Write results here instead of standard output.
    #[arg(long, global = true)]
    pub out: Option<String>,
    #[arg(long, global = true, value_enum, default_value = "csv")]
    pub format: Format,
    /// Cap on worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Confidence or credible interval for the signal.
    ///
    /// Methods: fc (Feldman-Cousins likelihood-ratio ordering), classical
    /// (Neyman upper-tail construction), central (Neyman central
    /// construction), bayes (flat signal prior, nuisances marginalized),
    /// profile (Delta lnL rule on the profile likelihood), cls (Read's CLs),
    /// flip-flop (Gaussian measurement, upper limit or central interval
    /// chosen after the fact).
    Limit(LimitArgs),
    /// p-value for a background-only hypothesis, or a combination of p-values.
    ///
    /// Nuisance strategies follow Cousins, Linnemann and Tucker:
    /// plug-in, prior-predictive, posterior-predictive, supremum,
    /// ci-adjusted (Berger-Boos) and conditioning on the total count.
    Pvalue(PvalueArgs),
    /// CLs = (1 - p1) / (1 - p0) for a counting experiment (Read), or the CLs upper limit.
    Cls(ClsArgs),
    /// Sensitivity: Punzi's discovery sensitivity or the median expected upper limit.
    Sensitivity(SensitivityArgs),
    /// Toy Monte Carlo coverage of an interval procedure.
    Coverage(CoverageArgs),
    /// One-at-a-time (unisim) versus joint (multisim) systematic uncertainty.
    Systematics(SystematicsArgs),
    /// Weighted average of measurements with the PDG scale factor, or the
    /// Poisson-weight bias demonstration.
    Combine(CombineArgs),
    /// Add a hidden offset derived from a key (Alvarez-style blinding).
    Blind(BlindArgs),
    /// Remove the hidden offset added by `blind`.
    Unblind(UnblindArgs),
    /// Goodness-of-fit tests.
    #[command(subcommand)]
    Gof(GofCommand),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LimitMethod {
    Fc,
    Classical,
    Central,
    Bayes,
    Profile,
    Cls,
    FlipFlop,
}

/// Background and efficiency given inline when no model file is used.
#[derive(Debug, Args, Serialize)]
pub struct Inline {
    /// Known background mean.
    #[arg(long)]
    pub b: Option<f64>,
    /// Known efficiency.
    #[arg(long)]
    pub eff: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct LimitArgs {
    #[arg(long, value_enum)]
    pub method: LimitMethod,
    /// Observed count.
    #[arg(long)]
    pub n: Option<u64>,
    /// Gaussian measurement for flip-flop.
    #[arg(long, allow_hyphen_values = true)]
    pub x: Option<f64>,
    #[command(flatten)]
    pub inline: Inline,
    #[arg(long, default_value_t = 0.9)]
    pub cl: f64,
    /// lnL drop for the profile method; defaults to the value matching --cl.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Observed background subsidiary count (defaults to its nominal value).
    #[arg(long)]
    pub m_b: Option<u64>,
    /// Observed efficiency subsidiary count (defaults to its nominal value).
    #[arg(long)]
    pub m_eff: Option<u64>,
    /// Flip-flop switch point in units of sigma.
    #[arg(long, default_value_t = 3.0)]
    pub switch_sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    PlugIn,
    PriorPredictive,
    PosteriorPredictive,
    Supremum,
    CiAdjusted,
    Conditioning,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    Min,
    Product,
}

#[derive(Debug, Args, Serialize)]
pub struct PvalueArgs {
    #[arg(long)]
    pub n: Option<u64>,
    #[command(flatten)]
    pub inline: Inline,
    /// Required when the background is uncertain.
    #[arg(long, value_enum)]
    pub strategy: Option<Strategy>,
    #[arg(long)]
    pub m_b: Option<u64>,
    /// Lower end of the background range (supremum, ci-adjusted).
    #[arg(long)]
    pub b_lo: Option<f64>,
    /// Upper end of the background range (supremum, ci-adjusted).
    #[arg(long)]
    pub b_hi: Option<f64>,
    /// Confidence-interval penalty for ci-adjusted.
    #[arg(long, default_value_t = countstat::significance::DEFAULT_GAMMA)]
    pub gamma: f64,
    /// Combine these p-values instead (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub combine: Option<Vec<f64>>,
    /// Combination rule; there is no default.
    #[arg(long, value_enum)]
    pub rule: Option<Rule>,
}

#[derive(Debug, Args, Serialize)]
pub struct ClsArgs {
    #[arg(long)]
    pub n: u64,
    #[command(flatten)]
    pub inline: Inline,
    /// Signal hypothesis; without it the CLs upper limit is reported.
    #[arg(long)]
    pub s: Option<f64>,
    #[arg(long, default_value_t = 0.95)]
    pub cl: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SensitivityKind {
    Punzi,
    Median,
}

#[derive(Debug, Args, Serialize)]
pub struct SensitivityArgs {
    #[arg(long, value_enum)]
    pub kind: SensitivityKind,
    #[command(flatten)]
    pub inline: Inline,
    /// Discovery threshold as a one-sided p-value (overrides --alpha-sigma).
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, default_value_t = 5.0)]
    pub alpha_sigma: f64,
    /// Required power for punzi; credibility or confidence of each limit for median.
    #[arg(long)]
    pub cl: Option<f64>,
    /// Background-only toys for median (odd).
    #[arg(long, default_value_t = 1001)]
    pub toys: usize,
    /// Limit procedure for median.
    #[arg(long, value_enum, default_value = "bayes")]
    pub method: LimitMethod,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoverageKind {
    Fc,
    Classical,
    Bayes,
    Profile,
    FlipFlop,
}

#[derive(Debug, Args, Serialize)]
pub struct CoverageArgs {
    #[arg(long, value_enum)]
    pub method: CoverageKind,
    #[command(flatten)]
    pub inline: Inline,
    #[arg(long, default_value_t = 0.0)]
    pub s_min: f64,
    #[arg(long, default_value_t = 20.0)]
    pub s_max: f64,
    #[arg(long, default_value_t = 0.1)]
    pub s_step: f64,
    #[arg(long, default_value_t = countstat::coverage::MIN_TOYS)]
    pub toys: usize,
    #[arg(long, default_value_t = 0.9)]
    pub cl: f64,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long, default_value_t = 3.0)]
    pub switch_sigma: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct SystematicsArgs {
    /// Nominal nuisance values (comma separated).
    #[arg(
        long,
        value_delimiter = ',',
        allow_hyphen_values = true,
        required = true
    )]
    pub nominal: Vec<f64>,
    /// Covariance rows separated by ';', entries by ','.
    #[arg(long, allow_hyphen_values = true)]
    pub covariance: String,
    /// Linear response coefficients.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub linear: Option<Vec<f64>>,
    /// Quadratic response coefficients (diagonal).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub quadratic: Option<Vec<f64>>,
    #[arg(long, default_value_t = 10_000)]
    pub multisim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightingArg {
    Observed,
    ExpectedAtEstimate,
    Iterated,
}

#[derive(Debug, Args, Serialize)]
pub struct CombineArgs {
    /// Measurement CSV with columns value,sigma and an optional label.
    #[arg(long)]
    pub input: Option<String>,
    /// Correlation matrix CSV (no header), one row per measurement.
    #[arg(long)]
    pub correlation: Option<String>,
    /// Correlation coefficient for exactly two measurements.
    #[arg(long, allow_hyphen_values = true)]
    pub rho: Option<f64>,
    /// Run the Poisson-weight bias simulation with this weighting instead.
    #[arg(long, value_enum)]
    pub weight_bias: Option<WeightingArg>,
    #[arg(long, default_value_t = 100.0)]
    pub true_mean: f64,
    #[arg(long, default_value_t = 100_000)]
    pub repeats: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct BlindArgs {
    #[arg(long, allow_hyphen_values = true)]
    pub value: f64,
    /// Secret key; the offset is derived from it and stored nowhere.
    #[arg(long)]
    pub key: String,
    #[arg(long, allow_hyphen_values = true, default_value_t = countstat::combine::DEFAULT_BLIND_RANGE.0)]
    pub lo: f64,
    #[arg(long, allow_hyphen_values = true, default_value_t = countstat::combine::DEFAULT_BLIND_RANGE.1)]
    pub hi: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct UnblindArgs {
    #[arg(long, allow_hyphen_values = true)]
    pub value: f64,
    /// Carry printed by `blind`.
    #[arg(long, allow_hyphen_values = true, default_value_t = 0.0)]
    pub carry: f64,
    #[arg(long)]
    pub key: String,
    #[arg(long, allow_hyphen_values = true, default_value_t = countstat::combine::DEFAULT_BLIND_RANGE.0)]
    pub lo: f64,
    #[arg(long, allow_hyphen_values = true, default_value_t = countstat::combine::DEFAULT_BLIND_RANGE.1)]
    pub hi: f64,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum GofCommand {
    /// Binned chi-square of data against a prediction (Pearson).
    Chi2(Chi2Args),
    /// Chi-square difference between a restricted and an extended hypothesis
    /// (Wilks asymptotics or a Monte Carlo null).
    DeltaChi2(DeltaChi2Args),
    /// Two-sample energy test (Aslan-Zech) with a permutation p-value.
    Energy(EnergyArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct Chi2Args {
    /// CSV with columns lo,hi,observed,predicted and an optional variance.
    #[arg(long)]
    pub data: String,
    #[arg(long, default_value_t = 0)]
    pub n_fitted: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    Wilks,
    McNull,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Extension {
    Polynomial,
    Peak,
}

#[derive(Debug, Args, Serialize)]
pub struct DeltaChi2Args {
    /// Chi-square of the restricted hypothesis, when both values are known.
    #[arg(long)]
    pub chi2_restricted: Option<f64>,
    #[arg(long)]
    pub chi2_extended: Option<f64>,
    /// Extra parameters of the extended hypothesis.
    #[arg(long)]
    pub k: Option<usize>,
    /// Histogram CSV with columns lo,hi,observed; both hypotheses are fitted.
    #[arg(long)]
    pub data: Option<String>,
    /// Degree of the restricted polynomial (the background).
    #[arg(long, default_value_t = 1)]
    pub degree: usize,
    /// Extension: one more polynomial degree, or a Gaussian peak.
    #[arg(long, value_enum, default_value = "polynomial")]
    pub extension: Extension,
    #[arg(long, value_enum, default_value = "wilks")]
    pub regime: Regime,
    #[arg(long, default_value_t = 1000)]
    pub toys: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct EnergyArgs {
    /// First sample: CSV, one point per row.
    #[arg(long)]
    pub a: String,
    /// Second sample.
    #[arg(long)]
    pub b: String,
    /// Per-dimension metric scales (default 1).
    #[arg(long, value_delimiter = ',')]
    pub scales: Option<Vec<f64>>,
    /// Distance floor; defaults to 1e-6 of the median pairwise distance.
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long, default_value_t = 999)]
    pub perm: usize,
}

pub enum CliError {
    Usage(String),
    Compute(String),
}

impl From<countstat::Error> for CliError {
    fn from(e: countstat::Error) -> Self {
        CliError::Compute(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    if let Some(t) = cli.threads {
        if t == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .expect("thread pool is configured once");
    }
    let start = Instant::now();
    let result = commands::run(&cli).and_then(|out| {
        let parameters = serde_json::json!({
            "arguments": &cli.command,
            "model_file": &cli.model,
            "model": out.model,
        });
        let manifest = output::Manifest {
            command: out.name,
            parameters,
            seed: cli.seed,
            version: env!("CARGO_PKG_VERSION"),
            threads: cli.threads,
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        output::emit(&out.table, cli.format, cli.out.as_deref(), &manifest)
            .map_err(CliError::Compute)
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Compute(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
