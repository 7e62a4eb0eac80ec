use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

use config::{Overrides, RunConfig};

/// Pretraining label-efficiency benchmark on a synthetic chest X-ray cohort.
#[derive(Parser, Debug)]
#[command(name = "pretrain-bench", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic cohort: manifest CSV plus PNG images.
    Synth(Common),
    /// Pretrain strategies on the pretraining cohort and write checkpoints.
    Pretrain(Common),
    /// Encode the trial and external cohorts with trained checkpoints.
    Extract(Common),
    /// Fit the probe on the whole training pool and score the test cohorts.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Probe training-set size (default: the whole pool).
        #[arg(long)]
        size: Option<usize>,
    },
    /// Run the training-size sweep, resuming from an existing trial log.
    Sweep(Common),
    /// Rebuild report files from a trial log and print the aggregate table.
    Report {
        #[command(flatten)]
        common: Common,
        /// Trial log to read (default: the sweep's trials.csv).
        #[arg(long)]
        trials: Option<PathBuf>,
    },
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config file).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides the config file).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Restrict to these strategies; repeatable.
    #[arg(long = "strategy")]
    strategies: Vec<String>,
    /// Worker threads (default: available cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Use the published hyperparameters instead of the desk profile.
    #[arg(long)]
    paper_scale: bool,
}

impl Common {
    fn load(&self) -> Result<RunConfig, CliError> {
        let overrides =
            Overrides { seed: self.seed, out: self.out.clone(), paper_scale: self.paper_scale, workers: self.workers };
        let cfg = RunConfig::load(self.config.as_deref(), &overrides)?;
        if cfg.profile == config::Profile::Paper {
            eprintln!("warning: paper-scale settings train 224-pixel encoders for 100 epochs; expect days of CPU time");
        }
        if let Some(n) = cfg.workers {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| CliError::Runtime(e.to_string()))?;
        }
        Ok(cfg)
    }
}

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or configuration: exit code 2.
    Usage(String),
    /// Anything that failed while running: exit code 1.
    Runtime(String),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Runtime(format!("{}: {e}", path.display()))
    }
}

impl From<pretrain_bench::Error> for CliError {
    fn from(e: pretrain_bench::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth(c) => commands::synth(&c.load()?),
        Command::Pretrain(c) => commands::pretrain(&c.load()?, &c.strategies),
        Command::Extract(c) => commands::extract(&c.load()?, &c.strategies),
        Command::Eval { common, size } => commands::eval(&common.load()?, &common.strategies, size),
        Command::Sweep(c) => commands::sweep(&c.load()?, &c.strategies),
        Command::Report { common, trials } => commands::report(&common.load()?, trials.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
