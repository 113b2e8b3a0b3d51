//! `cosimo` command-line tool.
//!
//! Exit codes: 0 on success, 1 when a run fails (including bound violations
//! under `--strict`), 2 for usage errors such as bad flags, invalid configs
//! or missing input files.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cosimo::experiments::ExperimentKind;
use cosimo::spectral::OperatorKind;

#[derive(Parser)]
#[command(name = "cosimo", version, about = "Continuous simplicial neural networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a random Delaunay complex with holes and write it as JSON.
    Generate(GenerateArgs),
    /// Run an experiment and write its CSV results and a manifest.
    Run(RunArgs),
    /// Print the spectrum of a Hodge Laplacian and entropy-based truncation sizes.
    Inspect(InspectArgs),
    /// Train a next-vertex predictor on trajectories over a complex.
    Train(TrainArgs),
    /// Evaluate a trained checkpoint on the held-out trajectories.
    Eval(EvalArgs),
}

#[derive(Args)]
pub struct GenerateArgs {
    /// Number of random points.
    #[arg(long, default_value_t = 30)]
    pub n: usize,
    /// Hole disks: `default`, `none`, or `x,y,r` triples separated by `;`.
    #[arg(long, default_value = "default")]
    pub holes: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output file; defaults to `complex.json` in the output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub env: EnvArgs,
}

#[derive(Args)]
pub struct RunArgs {
    #[arg(long, value_parser = parse_experiment)]
    pub experiment: ExperimentKind,
    /// JSON config; defaults are used for absent fields or when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Exit with status 1 if any bound is violated.
    #[arg(long)]
    pub strict: bool,
    #[command(flatten)]
    pub env: EnvArgs,
}

#[derive(Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub complex: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub level: usize,
    #[arg(long, value_enum, default_value = "full")]
    pub op: OpArg,
    /// Mass left out by the entropy selector, one K per value.
    #[arg(long, value_delimiter = ',', default_values_t = [0.01, 0.05, 0.1, 0.2, 0.5])]
    pub tau: Vec<f64>,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub complex: PathBuf,
    /// Trajectory-experiment JSON config; `complex` and `realizations` are ignored.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub env: EnvArgs,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub complex: PathBuf,
    /// Config used for training, to regenerate the held-out split.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Settings that may also come from the environment.
#[derive(Args)]
pub struct EnvArgs {
    /// Default output directory.
    #[arg(long = "out-dir", env = "COSIMO_OUT_DIR", default_value = ".", hide_env_values = true)]
    pub out_dir: PathBuf,
    /// Worker threads; defaults to the realization count capped at the cores.
    #[arg(long, env = "COSIMO_JOBS")]
    pub jobs: Option<usize>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
pub enum OpArg {
    Down,
    Up,
    Full,
}

impl From<OpArg> for OperatorKind {
    fn from(o: OpArg) -> Self {
        match o {
            OpArg::Down => OperatorKind::Down,
            OpArg::Up => OperatorKind::Up,
            OpArg::Full => OperatorKind::Full,
        }
    }
}

fn parse_experiment(s: &str) -> Result<ExperimentKind, String> {
    s.parse().map_err(|_| format!("expected one of oversmooth, stability, trajectory; got {s:?}"))
}

/// Error carrying its exit status.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<cosimo::Error> for Failure {
    fn from(e: cosimo::Error) -> Self {
        match e {
            cosimo::Error::Config(_) | cosimo::Error::TooFewPoints(_) => Failure::Usage(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Generate(a) => commands::generate(&a),
        Command::Run(a) => commands::run(&a),
        Command::Inspect(a) => commands::inspect(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
