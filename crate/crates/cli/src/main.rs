//! `iqc-cert`: certify, sweep, simulate, estimate gains, train and report.
//!
//! Exit codes: 0 on success, 2 on invalid input (including inputs for which
//! no certificate can exist), 3 when the solver returned a numerical-failure
//! verdict. Errors are printed to stderr as a JSON object
//! `{"error": kind, "message": text, "exit_code": code}`.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use iqc_cert::Error;

#[derive(Parser, Debug)]
#[command(name = "iqc-cert", version, about = "L2-gain certificates for gradient-bounded controllers")]
pub struct Cli {
    /// Directory all relative input and output paths are resolved against.
    #[arg(long, global = true, default_value = ".")]
    pub workdir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Certify one bound set and print the certificate as JSON.
    Certify(CertifyArgs),
    /// Certify a grid of Lipschitz levels for one or more constraint modes.
    Sweep(SweepArgs),
    /// Simulate the closed loop and write the trajectory as CSV.
    Simulate(SimulateArgs),
    /// Estimate the empirical L2 gain and compare it with the certified γ.
    Gain(GainArgs),
    /// Train a gradient-regulated policy on a benchmark.
    Train(TrainArgs),
    /// Turn a sweep directory into a tidy margin table and a summary.
    Report(ReportArgs),
}

/// Which plant to work on: a bundled preset or a plant file.
#[derive(Args, Debug, Clone)]
pub struct SourceArgs {
    /// Bundled benchmark: `flight4` or `power_swing`.
    #[arg(long, conflicts_with = "plant", required_unless_present = "plant")]
    pub preset: Option<String>,
    /// Plant configuration file (JSON).
    #[arg(long)]
    pub plant: Option<PathBuf>,
    /// IQC used for the preset's residual channels.
    #[arg(long, value_enum, default_value_t = IqcArg::Combined)]
    pub iqc: IqcArg,
    /// Zames–Falb filter pole for the preset's IQC.
    #[arg(long, default_value_t = 1.0)]
    pub pole: f64,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum IqcArg {
    Sector,
    Zf,
    Combined,
}

/// γ search settings shared by the certifying subcommands.
#[derive(Args, Debug, Clone)]
pub struct GammaArgs {
    /// Lower end of the γ search interval.
    #[arg(long, default_value_t = 1e-2)]
    pub gamma_min: f64,
    /// Upper end of the γ search interval.
    #[arg(long, default_value_t = 1e4)]
    pub gamma_max: f64,
    /// Relative tolerance of the γ bisection.
    #[arg(long, default_value_t = 0.05)]
    pub tol: f64,
}

#[derive(Args, Debug)]
pub struct CertifyArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    /// Bounds file (dense or pattern form).
    #[arg(long, conflicts_with_all = ["mode", "level"])]
    pub bounds: Option<PathBuf>,
    /// Constraint mode used with `--level` instead of a bounds file.
    #[arg(long, requires = "level")]
    pub mode: Option<String>,
    /// Lipschitz level used with `--mode`.
    #[arg(long, requires = "mode")]
    pub level: Option<f64>,
    /// One-sided margin ε of the nonhomogeneous mode.
    #[arg(long, default_value_t = 0.1)]
    pub eps: f64,
    #[command(flatten)]
    pub gamma: GammaArgs,
    /// Write the certificate here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    /// Constraint modes (`l2`, `sparsity`, `nonhom`, or `all`); repeatable.
    #[arg(long, default_value = "all")]
    pub mode: Vec<String>,
    /// Level grid, `start:step:stop` (inclusive) or a comma-separated list.
    #[arg(long, default_value = "0.1:0.1:3.0")]
    pub grid: String,
    /// Sign-pattern file (from `train`) used by the sparsity and
    /// nonhomogeneous modes of a plant file.
    #[arg(long)]
    pub pattern: Option<PathBuf>,
    /// One-sided margin ε of the nonhomogeneous mode.
    #[arg(long, default_value_t = 0.1)]
    pub eps: f64,
    #[command(flatten)]
    pub gamma: GammaArgs,
    /// Output directory for the CSVs and the bundle.
    #[arg(long, default_value = "sweep")]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    /// Policy file; the zero controller is used if absent.
    #[arg(long)]
    pub controller: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Integration step.
    #[arg(long, default_value_t = 1e-3)]
    pub h: f64,
    /// Horizon.
    #[arg(long = "T", default_value_t = 20.0)]
    pub horizon: f64,
    /// Standard deviation of the random initial state.
    #[arg(long, default_value_t = 0.1)]
    pub x0_std: f64,
    /// Standard deviation of the low-pass exploration noise (0 disables it).
    #[arg(long, default_value_t = 0.0)]
    pub explore_std: f64,
    /// Cut-off frequency of the exploration noise (rad/s).
    #[arg(long, default_value_t = 5.0)]
    pub explore_cutoff: f64,
    /// Output CSV.
    #[arg(long, default_value = "trajectory.csv")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct GainArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    /// Policy file; the zero controller is used if absent.
    #[arg(long)]
    pub controller: Option<PathBuf>,
    /// Number of random low-pass excitations.
    #[arg(long, default_value_t = 10)]
    pub n_excitations: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-3)]
    pub h: f64,
    /// Horizon.
    #[arg(long = "T", default_value_t = 20.0)]
    pub horizon: f64,
    /// Excitation standard deviation.
    #[arg(long, default_value_t = 0.05)]
    pub amplitude: f64,
    /// Excitation cut-off frequency (rad/s).
    #[arg(long, default_value_t = 5.0)]
    pub cutoff: f64,
    /// Excitations are switched off after this time so the response decays.
    #[arg(long, default_value_t = 5.0)]
    pub active: f64,
    #[command(flatten)]
    pub gamma: GammaArgs,
    /// Write the JSON result here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Bundled benchmark: `flight4` or `power_swing`.
    #[arg(long)]
    pub preset: String,
    /// Regulation: `none`, `soft` or `ht`.
    #[arg(long)]
    pub mode: Option<String>,
    /// Certified Lipschitz level l°.
    #[arg(long)]
    pub lcert: Option<f64>,
    /// Number of iterations.
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Training configuration file; flags above override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// One-sided margin ε written into the exported pattern file.
    #[arg(long, default_value_t = 0.1)]
    pub eps: f64,
    /// Output directory.
    #[arg(long, default_value = "train")]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Sweep output directory (must contain `bundle.json`).
    #[arg(long, default_value = "sweep")]
    pub dir: PathBuf,
    /// Output CSV; defaults to `margins.csv` inside the sweep directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// A failure with its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    pub fn validation(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            kind: "validation",
            message: message.into(),
        }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Self {
            code: 3,
            kind: "numerical_failure",
            message: message.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let message = e.to_string();
        match e {
            Error::Numerical(_) => Self::numerical(message),
            Error::CertificationImpossible(_) => Self {
                code: 2,
                kind: "certification_impossible",
                message,
            },
            _ => Self::validation(message),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::validation(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::validation(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::validation(e.to_string())
    }
}

fn configure_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("IQC_CERT_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| CliError::validation(format!("IQC_CERT_THREADS must be a positive integer, got '{v}'")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::validation(e.to_string()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    let wd = cli.workdir;
    match cli.command {
        Command::Certify(a) => commands::certify(&wd, a),
        Command::Sweep(a) => commands::sweep(&wd, a),
        Command::Simulate(a) => commands::simulate(&wd, a),
        Command::Gain(a) => commands::gain(&wd, a),
        Command::Train(a) => commands::train(&wd, a),
        Command::Report(a) => commands::report(&wd, a),
    }
}

fn fail(e: CliError) -> ExitCode {
    let payload = serde_json::json!({
        "error": e.kind,
        "message": e.message,
        "exit_code": e.code,
    });
    eprintln!("{payload}");
    ExitCode::from(e.code)
}

fn main() -> ExitCode {
    // Library warnings go to stderr; `RUST_LOG` overrides the level.
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            return fail(CliError {
                code: 2,
                kind: "usage",
                message: e.to_string(),
            });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e),
    }
}
