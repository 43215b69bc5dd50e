//! Command-line front end: frequency tables, bound grids, toy-alignment
//! training, duration-rescaling evaluation, and the fast invariant suite.
//!
//! Exit codes: 0 success, 1 failed checks, 2 usage error, 3 numeric
//! divergence, 4 I/O error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use larope_core::{SjMode, Variant, DEFAULT_BASE, DEFAULT_GAMMA};

mod check;
mod commands;

#[derive(Parser)]
#[command(
    name = "larope",
    version,
    about = "Rotary and length-aware rotary position embeddings: bound grids, toy alignment training, and invariant checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the rotation frequency table theta_j = base^(-2j/d) as CSV.
    Freqs {
        /// Head dimension (even, >= 2).
        #[arg(long)]
        d: usize,
        #[arg(long, default_value_t = DEFAULT_BASE)]
        base: f64,
        /// Output path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export a relative upper-bound grid as CSV plus a ridge-statistics
    /// JSON sidecar.
    Bounds {
        /// Query length.
        #[arg(long)]
        lq: usize,
        /// Key length.
        #[arg(long)]
        lk: usize,
        #[arg(long, value_enum, default_value_t = VariantArg::Larope)]
        variant: VariantArg,
        #[arg(long, default_value_t = 64)]
        d: usize,
        #[arg(long, default_value_t = DEFAULT_BASE)]
        base: f64,
        #[arg(long, default_value_t = DEFAULT_GAMMA)]
        gamma: f64,
        #[arg(long = "sj-mode", value_enum, default_value_t = SjModeArg::PartialSum)]
        sj_mode: SjModeArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the toy alignment model from a JSON config, writing records
    /// CSV, a summary JSON, and a model checkpoint.
    Train {
        /// Path to the TrainConfig JSON document.
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "out-dir")]
        out_dir: PathBuf,
    },
    /// Evaluate a trained checkpoint under query-length rescaling factors.
    Duration {
        /// Path to a model.json written by `train`.
        #[arg(long)]
        model: PathBuf,
        /// Comma-separated positive rescaling factors.
        #[arg(long, value_delimiter = ',', default_values_t = [0.7, 0.85, 1.0, 1.2, 1.4])]
        factors: Vec<f64>,
        /// Output path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the fast invariant suite, printing one line per property.
    Check {
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Randomized instances per property.
        #[arg(long, default_value_t = 200)]
        cases: usize,
        /// Test hook: corrupt the suite's frequency-table oracle.
        #[arg(long, hide = true)]
        inject_freq_fault: bool,
    },
    /// Compare the summary JSONs of two training runs.
    Compare { left: PathBuf, right: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Rope,
    Larope,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Variant {
        match v {
            VariantArg::Rope => Variant::Rope,
            VariantArg::Larope => Variant::Larope,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SjModeArg {
    /// S_j as the magnitude of the partial phase sum (decaying form).
    PartialSum,
    /// S_j as the sum of unit moduli (constant form, fidelity check).
    Magnitudes,
}

impl From<SjModeArg> for SjMode {
    fn from(m: SjModeArg) -> SjMode {
        match m {
            SjModeArg::PartialSum => SjMode::MagnitudeOfPartialSum,
            SjModeArg::Magnitudes => SjMode::SumOfMagnitudes,
        }
    }
}

/// Failure modes mapped onto the documented exit codes.
#[derive(Debug)]
enum CliError {
    /// Bad arguments or malformed configuration (exit 2).
    Usage(String),
    /// Numeric divergence during training (exit 3).
    Divergence { step: usize },
    /// Filesystem failure (exit 4).
    Io(String),
    /// One or more invariant checks failed (exit 1).
    ChecksFailed(Vec<String>),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::ChecksFailed(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Divergence { .. } => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "{msg}"),
            CliError::Divergence { step } => {
                write!(
                    f,
                    "training diverged (non-finite loss or parameters) at step {step}"
                )
            }
            CliError::Io(msg) => write!(f, "{msg}"),
            CliError::ChecksFailed(names) => {
                write!(f, "failed properties: {}", names.join(", "))
            }
        }
    }
}

impl From<larope_core::Error> for CliError {
    fn from(e: larope_core::Error) -> Self {
        CliError::Usage(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Freqs { d, base, out } => commands::freqs(d, base, out.as_deref()),
        Command::Bounds {
            lq,
            lk,
            variant,
            d,
            base,
            gamma,
            sj_mode,
            out,
        } => commands::bounds(lq, lk, variant.into(), d, base, gamma, sj_mode.into(), &out),
        Command::Train { config, out_dir } => commands::train(&config, &out_dir),
        Command::Duration {
            model,
            factors,
            out,
        } => commands::duration(&model, &factors, out.as_deref()),
        Command::Check {
            seed,
            cases,
            inject_freq_fault,
        } => check::run(seed, cases, inject_freq_fault),
        Command::Compare { left, right } => commands::compare(&left, &right),
    }
}
