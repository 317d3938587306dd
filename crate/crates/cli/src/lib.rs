pub mod config;
pub mod error;
pub mod jobs;
pub mod output;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::{Overrides, RunConfig};
use crate::error::{CliError, CliResult};

/// Screening with noisy credit signals: simulation, moment estimation,
/// counterfactuals, score metrics, panel IV and modeling-bias experiments.
#[derive(Parser)]
#[command(name = "noisescreen", version)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Simulate applicant populations and their target moments.
    Simulate(Common),
    /// Fit model parameters to a target-moment file.
    Estimate(Common),
    /// Baseline, remove-other-signal and equalize-score-precision scenarios.
    Counterfactual(Common),
    /// ROC, AUC, log-odds fit and decomposition tables from score data.
    Metrics(Common),
    /// Synthetic lender panel with first- and second-stage regressions.
    Panel(Common),
    /// Pooled, split and re-weighted logistic training experiments.
    BiasLab(Common),
}

#[derive(Args)]
pub struct Common {
    /// TOML run configuration.
    #[arg(short, long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory (default: ./<command>-out).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Loss given default; overrides the config (default 0.40).
    #[arg(long)]
    gamma: Option<f64>,
}

impl Command {
    fn parts(&self) -> (&'static str, &Common) {
        match self {
            Command::Simulate(c) => ("simulate", c),
            Command::Estimate(c) => ("estimate", c),
            Command::Counterfactual(c) => ("counterfactual", c),
            Command::Metrics(c) => ("metrics", c),
            Command::Panel(c) => ("panel", c),
            Command::BiasLab(c) => ("bias-lab", c),
        }
    }
}

/// Runs one parsed invocation and returns the paths written.
pub fn run(cli: &Cli) -> CliResult<Vec<PathBuf>> {
    let threads = cli.command.parts().1.threads;
    match threads {
        None => run_job(cli),
        Some(0) => Err(CliError::config("--threads must be ≥ 1")),
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| CliError::config(format!("cannot set up thread pool: {e}")))?
            .install(|| run_job(cli)),
    }
}

fn run_job(cli: &Cli) -> CliResult<Vec<PathBuf>> {
    let (name, common) = cli.command.parts();
    let overrides = Overrides {
        seed: common.seed,
        gamma: common.gamma,
    };
    let cfg = RunConfig::load(&common.config, &overrides, name)?;
    cfg.seed()?;
    cfg.gamma()?;
    let job = match cli.command {
        Command::Simulate(_) => jobs::simulate(&cfg)?,
        Command::Estimate(_) => jobs::estimate_job(&cfg)?,
        Command::Counterfactual(_) => jobs::counterfactual(&cfg)?,
        Command::Metrics(_) => jobs::metrics_job(&cfg)?,
        Command::Panel(_) => jobs::panel(&cfg)?,
        Command::BiasLab(_) => jobs::bias_lab(&cfg)?,
    };
    let dir = common.out.clone().unwrap_or_else(|| PathBuf::from(format!("{name}-out")));
    output::write_all(&dir, name, &cfg, &job.inputs, &job.outputs)?;
    Ok(job.outputs.names().map(|n| dir.join(n)).collect())
}

/// Parses `args` (program name first) and runs the job without printing.
pub fn run_args<I, T>(args: I) -> CliResult<Vec<PathBuf>>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| CliError::config(e.to_string()))?;
    run(&cli)
}

/// Parses `args` (program name first), runs the job and reports the outcome
/// the way the binary does: output paths on stdout, error JSON on stderr.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.render().to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            let err = CliError::config(first.trim_start_matches("error: ").to_string());
            eprintln!("{}", err.to_json());
            return ExitCode::from(err.exit_code() as u8);
        }
    };
    match run(&cli) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
