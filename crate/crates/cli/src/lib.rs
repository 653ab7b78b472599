//! `biharm` command-line driver: configuration, orchestration, CSV/JSON/BFLD
//! outputs and SVG plots.

pub mod check;
pub mod commands;
pub mod config;
pub mod svg;

use std::ffi::OsString;
use std::path::PathBuf;

use biharm_core::cgo::Fault;
use clap::{Parser, Subcommand, ValueEnum};

use crate::check::CheckOptions;
use crate::commands::Outputs;
use crate::config::{parse_grid_override, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numerical(String),
    CheckFailed(Vec<String>),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
            CliError::CheckFailed(v) => write!(f, "{} check(s) failed: {}", v.len(), v.join(", ")),
        }
    }
}

impl std::error::Error for CliError {}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Numerical(_) => EXIT_NUMERICAL,
            CliError::CheckFailed(_) => EXIT_CHECK,
        }
    }
}

impl From<biharm_core::Error> for CliError {
    fn from(e: biharm_core::Error) -> Self {
        use biharm_core::Error as E;
        match e {
            E::InvalidGrid(_) | E::InvalidArgument(_) | E::DimensionMismatch(_) | E::Format(_) => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Numerical(format!("i/o: {e}"))
    }
}

#[derive(Debug, Parser)]
#[command(name = "biharm", version, about = "Partial-data inverse problem toolkit for Δ² + A·D + q")]
pub struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides `out`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for frequency-parallel work.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Node counts, e.g. 33x33x17.
    #[arg(long, global = true)]
    pub grid: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FaultArg {
    None,
    ReflectionSign,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Navier solve (zero data) or manufactured-solution convergence table.
    Forward,
    /// Partial DtN maps of the base and perturbed pairs and their gap.
    Dtn,
    /// One reflected CGO solution.
    Cgo,
    /// Hodge split of the A difference.
    Hodge,
    /// Fourier samples of dA and φ against the oracle over the h ladder.
    RecoverDa,
    /// Fourier samples of q against the oracle over the h ladder.
    RecoverQ,
    /// Stability sweep over the τ grid: sweep.csv, samples.csv, loglog.svg.
    Sweep,
    /// Invariant suites; exit 1 on any failure.
    Check {
        /// Test hook: corrupt a stage on purpose.
        #[arg(long, value_enum, default_value = "none", hide = true)]
        inject_fault: FaultArg,
    },
    /// Re-render loglog.svg from an existing sweep.csv.
    Plot {
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

/// Config file plus command-line overrides.
pub fn effective_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
            RunConfig::parse(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.to_string_lossy().into_owned();
    }
    if let Some(g) = &cli.grid {
        cfg.grid.counts = parse_grid_override(g)?;
    }
    Ok(cfg)
}

pub fn execute(cli: &Cli) -> Result<String, CliError> {
    let cfg = effective_config(cli)?;
    let grid = cfg.validate()?;
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(CliError::Config("`--threads`: must be positive".into()));
        }
        // A second call in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    biharm_core::init_deterministic();
    let out = Outputs::new(&PathBuf::from(&cfg.out), &cfg)?;
    match &cli.command {
        Command::Forward => commands::forward(&cfg, grid, &out),
        Command::Dtn => commands::dtn(&cfg, grid, &out),
        Command::Cgo => commands::cgo(&cfg, grid, &out),
        Command::Hodge => commands::hodge(&cfg, grid, &out),
        Command::RecoverDa => commands::recover_da(&cfg, grid, &out),
        Command::RecoverQ => commands::recover_q(&cfg, grid, &out),
        Command::Sweep => commands::run_sweep(&cfg, grid, &out),
        Command::Check { inject_fault } => {
            let fault = match inject_fault {
                FaultArg::None => Fault::None,
                FaultArg::ReflectionSign => Fault::ReflectionSign,
            };
            let report = commands::check(&CheckOptions::new(cfg.seed, fault), &out)?;
            if report.passed {
                Ok(format!("check: {} invariants passed", report.items.len()))
            } else {
                Err(CliError::CheckFailed(report.failures))
            }
        }
        Command::Plot { input } => {
            let input = input.clone().unwrap_or_else(|| out.dir.join("sweep.csv"));
            commands::plot(&cfg, grid, &out, &input)
        }
    }
}

/// Parse, run and map the outcome to an exit status; messages go to
/// stdout/stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(msg) => {
            println!("{msg}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("biharm: {e}");
            e.exit_code()
        }
    }
}
