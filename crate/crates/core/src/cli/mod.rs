//! Command-line front end. Every command reads a run config, writes into
//! one output directory, and maps failures to exit codes:
//! 0 success, 1 other failure, 2 configuration error, 3 data error.

mod commands;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};

pub use commands::{cmd_backtest, cmd_compare_sampling, cmd_forecast, cmd_skilltest, cmd_synth, load_frame};

use crate::config::RunConfig;
use crate::error::Error;

pub const EXIT_OTHER: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DATA: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "mvembed", version, about = "Multiview delay-map forecasting, trading backtests and skill tests")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct CommonArgs {
    /// Run config (`key = value` lines); defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the `seed` key.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; 0 picks one per core.
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
}

#[derive(Debug, Clone, clap::Args)]
pub struct DataArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Input CSV (a directory of matrices is also accepted by `skilltest`).
    #[arg(long)]
    pub data: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate a Lorenz system, optionally with impulse noise.
    Synth(CommonArgs),
    /// Walk-forward ensemble forecasts.
    Forecast(DataArgs),
    /// Threshold-trading backtest on index levels.
    Backtest(DataArgs),
    /// Conditional permutation test on skill matrices, with FDR screening.
    Skilltest(DataArgs),
    /// Disjoint-partition versus random map sampling at equal map counts.
    CompareSampling(DataArgs),
}

/// An error with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn config(error: impl Into<anyhow::Error>) -> Self {
        Failure {
            code: EXIT_CONFIG,
            error: error.into(),
        }
    }

    /// Errors met while reading inputs; configuration problems keep their code.
    pub fn data(error: Error) -> Self {
        let code = if matches!(error, Error::Config(_)) { EXIT_CONFIG } else { EXIT_DATA };
        Failure {
            code,
            error: error.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(error: Error) -> Self {
        let code = match error {
            Error::Config(_) => EXIT_CONFIG,
            Error::Csv(_)
            | Error::Parse { .. }
            | Error::RaggedRow { .. }
            | Error::DuplicateName(_)
            | Error::UnknownColumn(_)
            | Error::InsufficientData(_) => EXIT_DATA,
            _ => EXIT_OTHER,
        };
        Failure {
            code,
            error: error.into(),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        match error.downcast::<Error>() {
            Ok(e) => e.into(),
            Err(error) => Failure { code: EXIT_OTHER, error },
        }
    }
}

pub type CliResult<T> = std::result::Result<T, Failure>;

/// Timed stages, written to `run.log`. The log is the only output that
/// varies between identical runs.
#[derive(Debug)]
pub struct RunLog {
    started: Instant,
    lines: String,
}

impl RunLog {
    pub fn new(command: &str, seed: u64, threads: usize) -> Self {
        let mut lines = String::new();
        let _ = writeln!(lines, "command {command}");
        let _ = writeln!(lines, "seed {seed}");
        let _ = writeln!(lines, "threads {threads} (pool {})", rayon::current_num_threads());
        RunLog {
            started: Instant::now(),
            lines,
        }
    }

    pub fn note(&mut self, text: impl AsRef<str>) {
        log::info!("{}", text.as_ref());
        let _ = writeln!(self.lines, "{}", text.as_ref());
    }

    /// Runs `f`, logging its wall time under `stage`.
    pub fn stage<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let out = f();
        self.note(format!("stage {stage} {:.3}s", t.elapsed().as_secs_f64()));
        out
    }

    pub fn finish(mut self, out: &Path) -> CliResult<()> {
        let total = self.started.elapsed().as_secs_f64();
        self.note(format!("total {total:.3}s"));
        std::fs::write(out.join("run.log"), self.lines)
            .map_err(|e| Failure::from(Error::io(out.join("run.log"), e)))
    }
}

/// Reads the config file (if any), applies the seed override, and validates.
pub fn load_config(args: &CommonArgs) -> CliResult<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::config(anyhow::anyhow!("cannot read config {}: {e}", path.display())))?;
            RunConfig::parse(&text).map_err(Failure::config)?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.set("seed", &seed.to_string()).map_err(Failure::config)?;
    }
    Ok(cfg)
}

fn prepare_out(out: &Path, cfg: &RunConfig) -> CliResult<()> {
    std::fs::create_dir_all(out).map_err(|e| Failure::from(Error::io(out, e)))?;
    std::fs::write(out.join("config.txt"), cfg.echo()).map_err(|e| Failure::from(Error::io(out.join("config.txt"), e)))
}

fn configure_threads(threads: usize) {
    if threads > 0 {
        // A second call in one process (e.g. from tests) keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
}

/// Executes a parsed command line.
pub fn run(cli: Cli) -> CliResult<()> {
    let (name, common, data) = match &cli.command {
        Command::Synth(c) => ("synth", c, None),
        Command::Forecast(d) => ("forecast", &d.common, Some(d.data.as_path())),
        Command::Backtest(d) => ("backtest", &d.common, Some(d.data.as_path())),
        Command::Skilltest(d) => ("skilltest", &d.common, Some(d.data.as_path())),
        Command::CompareSampling(d) => ("compare-sampling", &d.common, Some(d.data.as_path())),
    };
    configure_threads(common.threads);
    let cfg = load_config(common)?;
    let seed = cfg.seed().map_err(Failure::config)?;
    prepare_out(&common.out, &cfg)?;
    let mut log = RunLog::new(name, seed, common.threads);
    if let Some(path) = &common.config {
        log.note(format!("config {}", path.display()));
    }
    if let Some(d) = data {
        log.note(format!("data {}", d.display()));
    }
    let out = common.out.as_path();
    match (&cli.command, data) {
        (Command::Synth(_), _) => cmd_synth(&cfg, out, &mut log)?,
        (Command::Forecast(_), Some(d)) => cmd_forecast(&cfg, d, out, &mut log)?,
        (Command::Backtest(_), Some(d)) => cmd_backtest(&cfg, d, out, &mut log)?,
        (Command::Skilltest(_), Some(d)) => cmd_skilltest(&cfg, d, out, &mut log)?,
        (Command::CompareSampling(_), Some(d)) => cmd_compare_sampling(&cfg, d, out, &mut log)?,
        _ => unreachable!("every data command carries a data path"),
    }
    log.finish(out)
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            f.code
        }
    }
}
