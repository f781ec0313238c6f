//! `lfp`: batch analysis of paired HIP/NAc local field potential sessions.

mod commands;
mod input;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "lfp",
    version,
    about = "Time-domain analysis and reward-source classification of HIP/NAc LFP sessions"
)]
struct Cli {
    /// Pipeline configuration file (TOML or JSON).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Seed for every randomised step; overrides the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Band-pass filter and clamp outliers in a session CSV.
    Preprocess(PreprocessArgs),
    /// Per-window Hurst exponent, Lyapunov exponent and lag-1 autocorrelation.
    Validate(ValidateArgs),
    /// Fit a Gaussian and compare candidate density families for one channel.
    Fit(FitArgs),
    /// Divergence between PRE and POST sessions.
    Kld(KldArgs),
    /// Classify one subject from its PRE and POST sessions.
    Classify(ClassifyArgs),
    /// Refit classification thresholds on a labelled cohort.
    Calibrate(CalibrateArgs),
    /// Draw a symmetrized dot pattern as SVG.
    Sdp(SdpArgs),
    /// Generate a synthetic cohort.
    Synth(SynthArgs),
    /// Run the full analysis over a cohort directory.
    Pipeline(PipelineArgs),
    /// Hypothesis tests on groups of values.
    Stats(StatsArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Site {
    Hip,
    Nac,
}

#[derive(Args)]
struct PreprocessArgs {
    #[arg(long = "in", value_name = "CSV")]
    input: PathBuf,
    #[arg(long, value_name = "CSV")]
    out: PathBuf,
    /// Low cut-off in Hz.
    #[arg(long)]
    low: Option<f64>,
    /// High cut-off in Hz.
    #[arg(long)]
    high: Option<f64>,
    /// Butterworth order.
    #[arg(long)]
    order: Option<usize>,
    /// Sampling rate in Hz when the CSV has no sidecar.
    #[arg(long)]
    fs: Option<f64>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long = "in", value_name = "CSV")]
    input: PathBuf,
    /// Window length in seconds.
    #[arg(long, default_value_t = 5.0)]
    window: f64,
    /// Analyse only this many evenly spaced windows per channel.
    #[arg(long)]
    max_windows: Option<usize>,
    /// Output JSON (stdout if omitted).
    #[arg(long, value_name = "JSON")]
    report: Option<PathBuf>,
    #[arg(long)]
    fs: Option<f64>,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long = "in", value_name = "CSV")]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "hip")]
    column: Site,
    #[arg(long, value_name = "JSON")]
    out: Option<PathBuf>,
    #[arg(long)]
    fs: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum KldMode {
    Discrete1d,
    Gauss2d,
}

#[derive(Args)]
struct PairArgs {
    #[arg(long, value_name = "CSV")]
    pre: PathBuf,
    #[arg(long, value_name = "CSV")]
    post: PathBuf,
    /// Use the sessions as given instead of preprocessing them first.
    #[arg(long)]
    raw: bool,
}

#[derive(Args)]
struct KldArgs {
    #[command(flatten)]
    pair: PairArgs,
    #[arg(long, value_enum)]
    mode: KldMode,
    #[arg(long, value_name = "JSON")]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Corr,
    Kld1d,
    Kld2d,
}

#[derive(Args)]
struct ClassifyArgs {
    #[command(flatten)]
    pair: PairArgs,
    #[arg(long, value_enum)]
    method: MethodArg,
    /// Thresholds JSON, as written by `calibrate`.
    #[arg(long, value_name = "JSON")]
    thresholds: Option<PathBuf>,
    #[arg(long, value_name = "JSON")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long, value_name = "DIR")]
    cohort: PathBuf,
    #[arg(long, value_name = "JSON")]
    out: PathBuf,
}

#[derive(Args)]
struct SdpArgs {
    #[arg(long = "in", value_name = "CSV")]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "hip")]
    column: Site,
    /// Lag between radius and angle samples.
    #[arg(long = "L", value_name = "L")]
    lag: Option<usize>,
    /// Symmetry angle in degrees.
    #[arg(long)]
    theta: Option<f64>,
    /// Gain angle in degrees.
    #[arg(long)]
    zeta: Option<f64>,
    /// Start of the drawn segment in seconds.
    #[arg(long, default_value_t = 0.0)]
    start: f64,
    /// Length of the drawn segment in seconds (whole recording if omitted).
    #[arg(long)]
    seconds: Option<f64>,
    #[arg(long, default_value_t = 512)]
    width: u32,
    #[arg(long, value_name = "SVG")]
    out: PathBuf,
    /// Also write `radius,angle_deg` rows.
    #[arg(long, value_name = "CSV")]
    out_csv: Option<PathBuf>,
    #[arg(long)]
    fs: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Profile {
    Saline,
    Morphine,
    Food,
}

#[derive(Args)]
struct SynthArgs {
    /// Treatment groups to generate (all three if omitted).
    #[arg(long, value_enum, value_delimiter = ',')]
    profile: Vec<Profile>,
    #[arg(long, default_value_t = 5)]
    subjects: usize,
    /// Session length in seconds.
    #[arg(long, default_value_t = 600.0)]
    duration: f64,
    #[arg(long, default_value_t = 1000.0)]
    fs: f64,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long, value_name = "DIR")]
    cohort: PathBuf,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum TestArg {
    Ks,
    T,
    Mwu,
    Wilcoxon,
    Anova,
}

#[derive(Clone, Copy, ValueEnum)]
enum AltArg {
    TwoSided,
    Less,
    Greater,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long, value_enum)]
    test: TestArg,
    /// One CSV per group; values are read from the first column unless
    /// `--column` names another.
    #[arg(long, num_args = 1.., required = true, value_name = "CSV")]
    groups: Vec<PathBuf>,
    #[arg(long)]
    column: Option<String>,
    /// Paired t-test.
    #[arg(long)]
    paired: bool,
    /// Pooled-variance t-test instead of Welch.
    #[arg(long)]
    equal_var: bool,
    #[arg(long, value_enum, default_value = "two-sided")]
    alternative: AltArg,
    #[arg(long, value_name = "JSON")]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<commands::UsageError>() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
