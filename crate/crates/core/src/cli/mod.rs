//! Command-line front end.
//!
//! Every command validates its numeric parameters up front, then streams the
//! trace slice by slice. Output is CSV on `--out` (or stdout).

mod commands;

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::num::NonZeroUsize;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::counter::WindowConfig;
use crate::estimator::{VirtualEstimatorConfig, DEFAULT_FLOOR};
use crate::pool::{CounterKind, PartitionMethod};
use crate::synth::SynthError;
use crate::trace::{read_trace, slice_stream, TraceError, TraceFormat, TraceReader};

pub use commands::{cmd_bench, cmd_compare, cmd_estimate, cmd_exact, cmd_gen};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("bad input: {0}")]
    Input(String),
    #[error("output: {0}")]
    Output(#[from] io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Input(_) => 3,
            CliError::Output(_) => 1,
        }
    }

    fn config(e: impl std::fmt::Display) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<TraceError> for CliError {
    fn from(e: TraceError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Io(io) => CliError::Output(io),
            other => CliError::Config(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "vate", version, about = "Sliding-window host cardinality estimation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate per-host cardinalities at every slice end.
    Estimate(RunArgs),
    /// Exact per-host cardinalities from the brute-force oracle.
    Exact(RunArgs),
    /// Per-slice phase timings and maintenance counts.
    Bench(RunArgs),
    /// Run AT, DR and TS pools side by side and flag any difference.
    Compare(RunArgs),
    /// Generate a synthetic trace and its ground truth.
    Gen(GenArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Text,
    Binary,
}

impl From<FormatArg> for TraceFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Text => TraceFormat::Text,
            FormatArg::Binary => TraceFormat::Binary,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CounterArg {
    At,
    Dr,
    Ts,
}

impl From<CounterArg> for CounterKind {
    fn from(c: CounterArg) -> Self {
        match c {
            CounterArg::At => CounterKind::At,
            CounterArg::Dr => CounterKind::Dr,
            CounterArg::Ts => CounterKind::Ts,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PartitionArg {
    Tail,
    LowDev,
}

impl From<PartitionArg> for PartitionMethod {
    fn from(p: PartitionArg) -> Self {
        match p {
            PartitionArg::Tail => PartitionMethod::TailRemainder,
            PartitionArg::LowDev => PartitionMethod::LowDeviation,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long, value_enum, default_value = "text")]
    pub format: FormatArg,
    /// Pool holds 2^c counters.
    #[arg(long = "c", default_value_t = 20)]
    pub c: u32,
    /// Virtual counters per host.
    #[arg(long = "g", default_value_t = 1024)]
    pub g: u32,
    /// Maximum window width in slices.
    #[arg(long = "k", default_value_t = 30)]
    pub k: u32,
    /// Queried window width; defaults to k.
    #[arg(long = "k-prime")]
    pub k_prime: Option<u32>,
    #[arg(long = "slice-us", default_value_t = 1_000_000)]
    pub slice_us: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "at")]
    pub counter: CounterArg,
    #[arg(long, value_enum, default_value = "tail")]
    pub partition: PartitionArg,
    /// Hosts below this value are not reported.
    #[arg(long, default_value_t = DEFAULT_FLOOR)]
    pub floor: f64,
    /// Worker threads; defaults to available parallelism.
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write the AT pool snapshot here after the run.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Start from an AT pool snapshot instead of a fresh pool.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlanArg {
    Log,
    Pareto,
}

#[derive(Debug, Clone, Args)]
pub struct GenArgs {
    #[arg(long, default_value_t = 100)]
    pub hosts: u32,
    #[arg(long = "min-card", default_value_t = 100)]
    pub min_card: u32,
    #[arg(long = "max-card", default_value_t = 5000)]
    pub max_card: u32,
    #[arg(long, value_enum, default_value = "log")]
    pub plan: PlanArg,
    /// Pareto shape for `--plan pareto`.
    #[arg(long, default_value_t = 1.2)]
    pub alpha: f64,
    /// Active slices per host.
    #[arg(long, default_value_t = 30)]
    pub span: u64,
    /// Mean packets per distinct pair.
    #[arg(long, default_value_t = 1.0)]
    pub repetition: f64,
    #[arg(long, default_value_t = 1 << 24)]
    pub universe: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long = "slice-us", default_value_t = 1_000_000)]
    pub slice_us: u64,
    #[arg(long = "start-us", default_value_t = 1_508_731_200_000_000)]
    pub start_us: u64,
    /// Window width for the ground-truth rows.
    #[arg(long = "k-prime", default_value_t = 30)]
    pub k_prime: u32,
    #[arg(long, value_enum, default_value = "text")]
    pub format: FormatArg,
    /// Trace output path.
    #[arg(long)]
    pub out: PathBuf,
    /// Ground-truth output path.
    #[arg(long)]
    pub truth: PathBuf,
}

/// Validated parameters of a trace-processing command.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub trace: PathBuf,
    pub format: TraceFormat,
    pub window: WindowConfig,
    pub k_prime: u32,
    pub estimator: VirtualEstimatorConfig,
    pub floor: f64,
    pub workers: usize,
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub resume: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_args(args: &RunArgs) -> Result<Self, CliError> {
        let window = WindowConfig::new(args.k, args.slice_us).map_err(CliError::config)?;
        let k_prime = args.k_prime.unwrap_or(args.k);
        window.check_query(k_prime).map_err(CliError::config)?;
        let estimator = VirtualEstimatorConfig {
            g: args.g,
            c: args.c,
            k: args.k,
            seed: args.seed,
            counter_kind: args.counter.into(),
            partition: args.partition.into(),
        };
        estimator.validate().map_err(CliError::config)?;
        // pool shape checked without allocating the pool
        check_pool_shape(&estimator)?;
        if !args.floor.is_finite() {
            return Err(CliError::Config(format!("floor {} is not finite", args.floor)));
        }
        let workers = match args.workers {
            Some(0) => return Err(CliError::Config("--workers must be positive".into())),
            Some(n) => n,
            None => std::thread::available_parallelism().map_or(1, NonZeroUsize::get),
        };
        if (args.checkpoint.is_some() || args.resume.is_some())
            && estimator.counter_kind != CounterKind::At
        {
            return Err(CliError::Config(
                "--checkpoint/--resume require --counter at".into(),
            ));
        }
        Ok(Self {
            trace: args.trace.clone(),
            format: args.format.into(),
            window,
            k_prime,
            estimator,
            floor: args.floor,
            workers,
            out: args.out.clone(),
            checkpoint: args.checkpoint.clone(),
            resume: args.resume.clone(),
        })
    }

    pub(crate) fn open_trace(&self) -> Result<TraceReader<BufReader<File>>, CliError> {
        let file = File::open(&self.trace)
            .map_err(|e| CliError::Input(format!("{}: {e}", self.trace.display())))?;
        Ok(read_trace(BufReader::with_capacity(1 << 20, file), self.format))
    }

    pub(crate) fn slices(
        &self,
    ) -> Result<impl Iterator<Item = Result<crate::trace::SliceBatch, TraceError>>, CliError> {
        Ok(slice_stream(self.open_trace()?, self.window.slice_duration_us()))
    }

    pub(crate) fn output(&self) -> Result<Box<dyn Write + Send>, CliError> {
        open_output(self.out.as_ref())
    }

    pub(crate) fn thread_pool(&self) -> Result<rayon::ThreadPool, CliError> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| CliError::Config(e.to_string()))
    }
}

fn check_pool_shape(cfg: &VirtualEstimatorConfig) -> Result<(), CliError> {
    let (c, k) = (cfg.c, cfg.k);
    if (1u64 << c) < 2 * u64::from(k) {
        return Err(CliError::Config(format!(
            "pool of 2^{c} cells cannot hold 2k={} blocks",
            2 * k
        )));
    }
    if cfg.counter_kind == CounterKind::At
        && cfg.partition == PartitionMethod::TailRemainder
        && (1u64 << c).is_multiple_of(2 * u64::from(k) - 1)
    {
        return Err(CliError::Config(format!(
            "tail-remainder partition leaves the last block empty for c={c}, k={k}; \
             use --partition low-dev"
        )));
    }
    Ok(())
}

pub(crate) fn open_output(path: Option<&PathBuf>) -> Result<Box<dyn Write + Send>, CliError> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::with_capacity(1 << 16, io::stdout())),
    })
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Estimate(args) => cmd_estimate(&RunConfig::from_args(&args)?),
        Command::Exact(args) => cmd_exact(&RunConfig::from_args(&args)?),
        Command::Bench(args) => cmd_bench(&RunConfig::from_args(&args)?),
        Command::Compare(args) => cmd_compare(&RunConfig::from_args(&args)?),
        Command::Gen(args) => cmd_gen(&args),
    }
}
