//! `spectralab`: region files, identity checks and scaling sweeps driven by a
//! JSON config with command-line overrides.
//!
//! Exit codes: 0 ok, 1 verification or numerical failure, 2 configuration
//! error, 3 I/O error.

mod commands;
mod config;
mod output;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use spectralab_core::Error;

use crate::config::RunConfig;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Core(Error),
    Io(String, std::io::Error),
    /// Number of failed checks.
    VerifyFailed(usize),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::VerifyFailed(_) | CliError::Core(Error::Numerical(_)) => 1,
            CliError::Config(_)
            | CliError::Core(Error::InvalidParam(_) | Error::Refused(_) | Error::Unsupported(_)) => 2,
            CliError::Io(..) | CliError::Core(Error::Io(_)) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(s) => write!(f, "config error: {s}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io(path, e) => write!(f, "i/o error on {path}: {e}"),
            CliError::VerifyFailed(k) => write!(f, "{k} check(s) failed"),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "spectralab", version, about = "Exponent regions, spectral calculus checks and scaling sweeps")]
pub struct Cli {
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory for CSV and JSON outputs (created when missing).
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Exponent region of a negative-order or resolvent estimate.
    Region(RegionArgs),
    /// Deterministic identity checks; exits 1 if any fails.
    Verify(VerifyArgs),
    /// Scaling sweeps with power-law fits.
    #[command(subcommand)]
    Sweep(SweepCommand),
    /// Perturbation gate, Neumann series and smallness functional.
    Perturb(PerturbArgs),
    /// Weyl fractional derivative of a bump and its Weyl-Sobolev norm.
    Weyl(WeylArgs),
}

#[derive(Args, Debug)]
pub struct RegionArgs {
    /// 1..4 for the negative-order cases (auto-selected when omitted),
    /// or `krs`, `sobolev-line`, `restriction`.
    #[arg(long)]
    pub case: Option<String>,
    #[arg(long)]
    pub n: Option<u32>,
    #[arg(long)]
    pub m: Option<u32>,
    /// Rational, e.g. `-1/2`.
    #[arg(long, allow_hyphen_values = true)]
    pub alpha: Option<String>,
    #[arg(long)]
    pub p: Option<String>,
    #[arg(long)]
    pub p0: Option<String>,
    /// Membership query `1/r,1/s`, e.g. `1/2,1/3`.
    #[arg(long)]
    pub query: Option<String>,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    /// Run only checks whose name starts with this prefix (`weyl`, `symbol`, `grid`, `region`, `perturbation`).
    #[arg(long)]
    pub filter: Option<String>,
    /// Symbol as JSON, e.g. `{"n":2,"m":4,"terms":[[[4,0],1.0],[[0,4],1.0]]}`.
    #[arg(long)]
    pub symbol: Option<String>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct GridArgs {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub m: Option<u32>,
    /// Points per side (power of two).
    #[arg(long = "N")]
    pub big_n: Option<usize>,
    /// Box side length.
    #[arg(long = "L")]
    pub l: Option<f64>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct FitArgs {
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub restarts: Option<usize>,
}

#[derive(Subcommand, Debug)]
pub enum SweepCommand {
    /// Norms of the free resolvent over |z| and arg z.
    Sobolev {
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        fit: FitArgs,
        #[arg(long)]
        p: Option<String>,
        #[arg(long)]
        q: Option<String>,
        /// Decades spanned by |z|, starting at 1/4.
        #[arg(long)]
        decades: Option<f64>,
        #[arg(long)]
        points: Option<usize>,
        /// Comma-separated arguments of z in radians.
        #[arg(long)]
        args: Option<String>,
        /// Add boundary values lambda + i eps(lambda).
        #[arg(long)]
        boundary: bool,
        #[arg(long)]
        allow_inadmissible: bool,
    },
    /// Windowed spectral projector norms with and without a potential.
    Restriction {
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        fit: FitArgs,
        /// `ball:c,r`, `gaussian:c,sigma`, `inverse-square:c`, `file:PATH` or `zero`.
        #[arg(long)]
        potential: Option<String>,
        #[arg(long)]
        p: Option<f64>,
        /// Comma-separated lambda values.
        #[arg(long)]
        lambdas: Option<String>,
        /// Relative window width.
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        c0: Option<f64>,
        /// `dense` or `matrix-free`.
        #[arg(long)]
        mode: Option<String>,
    },
    /// Negative-order Bochner-Riesz norms over lambda.
    BochnerRiesz {
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        fit: FitArgs,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        p: Option<String>,
        /// `inf` allowed.
        #[arg(long)]
        q: Option<String>,
        #[arg(long)]
        lambdas: Option<String>,
        /// Window width for alpha = 0.
        #[arg(long)]
        window: Option<f64>,
        #[arg(long)]
        allow_inadmissible: bool,
    },
    /// Norms of exp(-t^m P) from L^p to L^2 over t.
    Gaussian {
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long)]
        tolerance: Option<f64>,
        #[arg(long)]
        t_list: Option<String>,
        #[arg(long)]
        p_list: Option<String>,
    },
    /// Off-diagonal heat kernel decay.
    DaviesGaffney {
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long)]
        potential: Option<String>,
        #[arg(long)]
        t_list: Option<String>,
        /// Comma-separated centre distances, in length units.
        #[arg(long)]
        distances: Option<String>,
        #[arg(long)]
        radius_factor: Option<f64>,
    },
}

#[derive(Args, Debug)]
pub struct PerturbArgs {
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long)]
    pub potential: Option<String>,
    /// Spectral parameter `re,im`.
    #[arg(long, allow_hyphen_values = true)]
    pub z: Option<String>,
    #[arg(long)]
    pub p_gate: Option<f64>,
    #[arg(long)]
    pub k_max: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub c0: Option<f64>,
    /// Stone density point.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub mode: Option<String>,
}

#[derive(Args, Debug)]
pub struct WeylArgs {
    #[arg(long)]
    pub nu: Option<f64>,
    #[arg(long)]
    pub h: Option<f64>,
    /// Support of the bump, `a,b`.
    #[arg(long)]
    pub support: Option<String>,
    /// Sampling window, `a,b`.
    #[arg(long, allow_hyphen_values = true)]
    pub window: Option<String>,
}

fn init_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("SPECTRALAB_THREADS") else {
        return Ok(());
    };
    let k: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&k| k > 0)
        .ok_or_else(|| CliError::Config(format!("SPECTRALAB_THREADS = {v:?} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(k)
        .build_global()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    init_threads()?;
    let cfg = RunConfig::load(cli.config.as_deref())?;
    let ctx = commands::Context::new(&cli, &cfg);
    match &cli.command {
        Command::Region(a) => commands::region(&ctx, a),
        Command::Verify(a) => verify::run(&ctx, a),
        Command::Sweep(s) => commands::sweep(&ctx, s),
        Command::Perturb(a) => commands::perturb(&ctx, a),
        Command::Weyl(a) => commands::weyl(&ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("spectralab: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
