//! `spectraloss` command-line interface.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Environment variable capping the worker thread count.
const THREADS_ENV: &str = "SPECTRALOSS_THREADS";

#[derive(Debug, Parser)]
#[command(name = "spectraloss", version, about = "Spectral losses and forecast verification on the sphere")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a random band-limited field with a power-law spectrum.
    Gen(GenArgs),
    /// Spherical-harmonic analysis of a grid field.
    Analyze(AnalyzeArgs),
    /// Synthesize a grid field from spectral coefficients.
    Synth(SynthArgs),
    /// Power spectrum per total wavenumber.
    Spectrum(SpectrumArgs),
    /// Spectral diagnostics and effective resolution of a prediction.
    Compare(CompareArgs),
    /// Evaluate a loss between two fields or two sets of variables.
    Loss(LossArgs),
    /// Check analytic AMSE gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Apply the fourth-order spectral high-pass (or low-pass) filter.
    Filter(FilterArgs),
    /// Ensemble scores.
    #[command(subcommand)]
    Ensemble(EnsembleCommand),
    /// Quantile-quantile statistics with a Kolmogorov-Smirnov band.
    Qq(QqArgs),
    /// Optimal spread ratio under the Gaussian KL objective.
    Klstudy(KlArgs),
    /// Demonstrations.
    #[command(subcommand)]
    Demo(DemoCommand),
}

#[derive(Debug, Args)]
struct OutArg {
    /// Output path; standard output when omitted.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long, default_value_t = 64)]
    nlat: usize,
    #[arg(long, default_value_t = 128)]
    nlon: usize,
    /// gaussian or equiangular.
    #[arg(long, default_value = "gaussian")]
    grid: String,
    #[arg(long, default_value_t = 42)]
    trunc: usize,
    /// Spectral slope p of PSD_k ∝ (1 + k)^-p.
    #[arg(long, default_value_t = 3.0)]
    slope: f64,
    /// Total variance of the field.
    #[arg(long, default_value_t = 1.0)]
    variance: f64,
    /// Make the field correlate with this one: rho * base + sqrt(1 - rho²) * noise.
    #[arg(long, requires = "rho")]
    like: Option<PathBuf>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    name: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output path (.sgf or .csv).
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    input: PathBuf,
    /// Truncation; the largest admissible for the grid when omitted.
    #[arg(long)]
    trunc: Option<usize>,
    /// Output path (.scf).
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SynthArgs {
    input: PathBuf,
    #[arg(long)]
    nlat: Option<usize>,
    #[arg(long)]
    nlon: Option<usize>,
    #[arg(long, default_value = "gaussian")]
    grid: String,
    /// Output path (.sgf or .csv).
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SpectrumArgs {
    /// Grid (.sgf/.csv) or spectral (.scf) field.
    input: PathBuf,
    #[arg(long)]
    trunc: Option<usize>,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Debug, Args)]
struct CompareArgs {
    /// Prediction.
    x: PathBuf,
    /// Reference.
    y: PathBuf,
    #[arg(long)]
    trunc: Option<usize>,
    /// Retained energy fraction defining the dissipation threshold.
    #[arg(long, default_value_t = 0.75)]
    energy_fraction: f64,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Debug, Args)]
struct LossArgs {
    /// mse, amse or mae.
    #[arg(long, default_value = "amse")]
    kind: String,
    /// Prediction field, or a directory of `<variable>.sgf` files with --weights.
    x: PathBuf,
    /// Reference field or directory.
    y: PathBuf,
    #[arg(long)]
    trunc: Option<usize>,
    /// Variable weights, one `name,weight,level_weight,std` line each.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Relative weight of the AMSE decoherence term.
    #[arg(long, default_value_t = 1.0)]
    decoherence_weight: f64,
    /// Per-wavenumber breakdown CSV.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 10)]
    trunc: usize,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Largest acceptable relative error.
    #[arg(long, default_value_t = 1e-6)]
    tolerance: f64,
}

#[derive(Debug, Args)]
struct FilterArgs {
    input: PathBuf,
    #[arg(long, default_value_t = spectraloss::diag::DEFAULT_HIGHPASS_K0)]
    k0: f64,
    /// Keep large scales instead of small ones.
    #[arg(long)]
    lowpass: bool,
    #[arg(long)]
    trunc: Option<usize>,
    /// Output path, same kind as the input.
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum EnsembleCommand {
    /// Score one ensemble against a verifying field.
    Score(ScoreArgs),
    /// Build lagged ensembles from a forecast archive and score them.
    Lagged(LaggedArgs),
}

#[derive(Debug, Args)]
struct ScoreArgs {
    /// Verifying field.
    #[arg(long)]
    truth: PathBuf,
    /// Member fields (at least two).
    #[arg(required = true, num_args = 2..)]
    members: Vec<PathBuf>,
    #[arg(long, default_value = "")]
    valid_time: String,
    #[arg(long, default_value_t = 0)]
    lead: i64,
    /// Add the CRPS spread term instead of subtracting it.
    #[arg(long)]
    paper_sign: bool,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Debug, Args)]
struct LaggedArgs {
    /// Root holding `init_<time>/lead_<hours>.sgf`.
    #[arg(long)]
    archive: PathBuf,
    /// Central-member lead time in hours; repeatable.
    #[arg(long = "lead", required = true)]
    leads: Vec<i64>,
    #[arg(long, default_value_t = 9)]
    window: usize,
    #[arg(long, default_value_t = 12)]
    stride: i64,
    #[arg(long)]
    paper_sign: bool,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Debug, Args)]
struct QqArgs {
    /// Samples (.sgf or text); omit both to draw normal samples.
    #[arg(num_args = 0..=2)]
    samples: Vec<PathBuf>,
    /// Size of each generated sample.
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    /// Mean shift of the generated y sample.
    #[arg(long, default_value_t = 0.0)]
    shift: f64,
    /// Standard deviation of the generated y sample.
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Debug, Args)]
struct KlArgs {
    #[arg(long, default_value_t = 0.4)]
    rho: f64,
    /// Emit a CSV over a grid of correlations instead.
    #[arg(long)]
    curve: bool,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Debug, Subcommand)]
enum DemoCommand {
    /// Train per-wavenumber gains on synthetic pairs.
    Train(TrainArgs),
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long, default_value = "mse")]
    loss: String,
    #[arg(long, default_value_t = 42)]
    trunc: usize,
    #[arg(long, default_value_t = 0.0)]
    slope: f64,
    /// Constant predictability; the default profile is exp(-k/K).
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    /// Initial learning rate.
    #[arg(long, default_value_t = 0.3)]
    lr: f64,
    /// Final learning rate of the cosine schedule.
    #[arg(long, default_value_t = 0.003)]
    lr_end: f64,
    /// Keep the learning rate fixed.
    #[arg(long)]
    constant_lr: bool,
    #[arg(long, default_value_t = 0.1)]
    init_gain: f64,
    /// Apply the loss per pair instead of to batch-pooled spectra.
    #[arg(long)]
    per_sample: bool,
    #[arg(long, default_value_t = 4096)]
    eval_samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    out: OutArg,
}

fn configure_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("{THREADS_ENV} must be a positive integer, got {raw:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(1);
    }
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(commands::Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            eprintln!("\nFor more information, try '--help'.");
            ExitCode::from(1)
        }
        Err(commands::Failure::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
