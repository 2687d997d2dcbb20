//! Command-line front end: `run`, `sweep` and `attack`.
//!
//! Exit status: 0 for a clean run, 2 when a violation was detected, 1 for
//! usage, configuration or internal errors.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::bench::attacks::{attack_cwe122_on, attack_cwe416_on, Attack, AttackReport};
use crate::bench::exec::{execute, RunMetrics, RunOutcome};
use crate::bench::sweep::{sweep, SweepRecord};
use crate::bench::workload::{generate, WorkloadSpec};
use crate::config::{ConfigError, SystemConfig};
use crate::runtime::{Mode, Runtime, RuntimeError};

pub const EXIT_CLEAN: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_VIOLATION: i32 = 2;

pub const CSV_HEADER: [&str; 8] = [
    "heapFraction",
    "mode",
    "cycles",
    "instructionCount",
    "ipc",
    "normalizedTime",
    "violations",
    "detectionLatency",
];

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("runtime error: {0}")]
    Runtime(#[from] RuntimeError),
    #[error("{0}")]
    Usage(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Parser, Debug)]
#[command(name = "heapsafe", version, about = "Tagged-pointer heap protection simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run one workload and print a CSV row.
    Run(RunArgs),
    /// Sweep heap fractions and modes, writing a CSV table.
    Sweep(SweepArgs),
    /// Replay an attack and report whether it was caught.
    Attack(AttackArgs),
}

#[derive(Args, Debug, Default)]
pub struct ConfigArgs {
    /// Key-value configuration file.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Default)]
pub enum Workload {
    #[default]
    Synthetic,
    Cwe122,
    Cwe416,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// baseline, softbc, heapsafe or heapsafe-nb; overrides the config.
    #[arg(long)]
    pub mode: Option<Mode>,
    #[arg(long, value_enum, default_value_t = Workload::Synthetic)]
    pub workload: Workload,
    /// Copy operations in the synthetic workload.
    #[arg(long, default_value_t = 20_000)]
    pub ops: usize,
    /// Share of copies that target the heap.
    #[arg(long, default_value_t = 0.75)]
    pub fraction: f64,
    /// Write the CSV here instead of standard output.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Comma-separated heap fractions.
    #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,0.75,1")]
    pub fractions: Vec<f64>,
    /// Comma-separated modes.
    #[arg(long, value_delimiter = ',', default_value = "baseline,softbc,heapsafe,heapsafe-nb")]
    pub modes: Vec<Mode>,
    #[arg(long, default_value_t = 20_000)]
    pub ops: usize,
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AttackArgs {
    /// cwe122 or cwe416.
    pub attack: Attack,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub mode: Option<Mode>,
    /// Let the reallocation reuse the freed tag (cwe416 only).
    #[arg(long)]
    pub reissue: bool,
}

impl ConfigArgs {
    pub fn load(&self) -> Result<SystemConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => SystemConfig::load(path)?,
            None => SystemConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

/// One CSV data row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub heap_fraction: f64,
    pub mode: Mode,
    pub metrics: RunMetrics,
    pub normalized_time: f64,
}

impl From<&SweepRecord> for CsvRow {
    fn from(r: &SweepRecord) -> Self {
        CsvRow {
            heap_fraction: r.heap_fraction,
            mode: r.mode,
            metrics: r.metrics.clone(),
            normalized_time: r.normalized_time,
        }
    }
}

pub fn write_csv<W: Write>(rows: &[CsvRow], out: W) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record([
            r.heap_fraction.to_string(),
            r.mode.to_string(),
            r.metrics.total_cycles.to_string(),
            r.metrics.instruction_count.to_string(),
            format!("{:.6}", r.metrics.ipc),
            format!("{:.6}", r.normalized_time),
            r.metrics.violations_detected.to_string(),
            r.metrics.detection_latency.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn open_out<'a>(path: &Option<PathBuf>, stdout: &'a mut dyn Write) -> Result<Box<dyn Write + 'a>, CliError> {
    Ok(match path {
        Some(p) => Box::new(File::create(p)?),
        None => Box::new(stdout),
    })
}

fn workload_spec(cfg: &SystemConfig, ops: usize, fraction: f64) -> Result<WorkloadSpec, CliError> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(CliError::Usage(format!("heap fraction {fraction} outside [0, 1]")));
    }
    Ok(WorkloadSpec::default().with_ops(ops).with_fraction(fraction).with_seed(cfg.seed))
}

/// Runs `workload` in `mode` on the configured engine fleet.
fn run_workload(cfg: &SystemConfig, mode: Mode, workload: Workload, spec: &WorkloadSpec) -> Result<RunMetrics, CliError> {
    let mut fleet = cfg.fleet(mode);
    let mut rt = Runtime::with_port(cfg.runtime_config().with_mode(mode), &mut fleet)?;
    let outcome = match workload {
        Workload::Synthetic => execute(&generate(spec), &mut rt),
        Workload::Cwe122 => {
            attack_cwe122_on(&mut rt)?;
            RunOutcome::Completed
        }
        Workload::Cwe416 => {
            attack_cwe416_on(&mut rt, false)?;
            RunOutcome::Completed
        }
    };
    Ok(RunMetrics::from_runtime(&rt, &cfg.cost, outcome))
}

pub fn cmd_run(cfg: &SystemConfig, args: &RunArgs, stdout: &mut dyn Write) -> Result<i32, CliError> {
    let mode = args.mode.unwrap_or(cfg.mode);
    let spec = workload_spec(cfg, args.ops, args.fraction)?;
    let metrics = run_workload(cfg, mode, args.workload, &spec)?;
    if let RunOutcome::Failed { error, .. } = metrics.outcome {
        return Err(CliError::Runtime(error));
    }
    let baseline = run_workload(cfg, Mode::Baseline, args.workload, &spec)?;
    let normalized_time = if baseline.total_cycles == 0 {
        1.0
    } else {
        metrics.total_cycles as f64 / baseline.total_cycles as f64
    };
    let heap_fraction = match args.workload {
        Workload::Synthetic => args.fraction,
        _ => 1.0,
    };
    let violations = metrics.violations_detected;
    let row = CsvRow { heap_fraction, mode, metrics, normalized_time };
    write_csv(&[row], open_out(&args.out, stdout)?)?;
    Ok(if violations > 0 { EXIT_VIOLATION } else { EXIT_CLEAN })
}

pub fn cmd_sweep(cfg: &SystemConfig, args: &SweepArgs, stdout: &mut dyn Write) -> Result<i32, CliError> {
    for &f in &args.fractions {
        if !(0.0..=1.0).contains(&f) {
            return Err(CliError::Usage(format!("heap fraction {f} outside [0, 1]")));
        }
    }
    let spec = WorkloadSpec::default().with_ops(args.ops).with_seed(cfg.seed);
    let records = sweep(&args.fractions, &args.modes, &cfg.cost, &spec, &cfg.runtime_config());
    let rows: Vec<CsvRow> = records.iter().map(CsvRow::from).collect();
    write_csv(&rows, open_out(&args.out, stdout)?)?;
    Ok(EXIT_CLEAN)
}

pub fn cmd_attack(cfg: &SystemConfig, args: &AttackArgs, stdout: &mut dyn Write) -> Result<i32, CliError> {
    let mode = args.mode.unwrap_or(cfg.mode);
    let mut fleet = cfg.fleet(mode);
    let mut rt = Runtime::with_port(cfg.runtime_config().with_mode(mode), &mut fleet)?;
    let report: AttackReport = match args.attack {
        Attack::Cwe122 => attack_cwe122_on(&mut rt)?,
        Attack::Cwe416 => attack_cwe416_on(&mut rt, args.reissue)?,
    };
    write!(stdout, "{report}")?;
    writeln!(stdout, "{}", report.verdict_line())?;
    Ok(if report.detected { EXIT_VIOLATION } else { EXIT_CLEAN })
}

/// Parses `args` and runs the chosen command. Returns the exit status.
pub fn main_with<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(stderr, "{}", e.render());
            return if e.use_stderr() { EXIT_ERROR } else { EXIT_CLEAN };
        }
    };
    let result = match &cli.command {
        Command::Run(a) => a.config.load().and_then(|cfg| cmd_run(&cfg, a, stdout)),
        Command::Sweep(a) => a.config.load().and_then(|cfg| cmd_sweep(&cfg, a, stdout)),
        Command::Attack(a) => a.config.load().and_then(|cfg| cmd_attack(&cfg, a, stdout)),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            EXIT_ERROR
        }
    }
}
