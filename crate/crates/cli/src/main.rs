mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Bad arguments or configuration; exits with status 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser)]
#[command(name = "gazegym", version, about = "Active-vision training and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by the run commands. Each overrides the config file.
#[derive(Args, Debug, Clone, Default)]
pub struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Cap on parallel environment workers.
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub budget_steps: Option<u64>,
    /// Stop training after this iteration; the budget still sets the schedule.
    #[arg(long)]
    pub max_iterations: Option<u64>,
    /// Checkpoint to resume from (train) or to evaluate (eval).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Render a perspective view of an equirectangular panorama.
    Render(RenderArgs),
    /// Write a synthetic demonstration dataset.
    Synth(RunArgs),
    /// Train the eye on object or scene search.
    TrainSearch(RunArgs),
    /// Evaluate a search checkpoint, or a reference policy.
    EvalSearch(EvalArgs),
    /// Co-train eye and hand policies.
    TrainBcrl(RunArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ProjectionArg {
    Pinhole,
    Fisheye,
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    #[arg(long)]
    pub panorama: PathBuf,
    /// Degrees.
    #[arg(long, allow_hyphen_values = true, default_value_t = 0.0)]
    pub azimuth: f64,
    /// Degrees.
    #[arg(long, allow_hyphen_values = true, default_value_t = 0.0)]
    pub elevation: f64,
    /// Horizontal field of view, degrees.
    #[arg(long, allow_hyphen_values = true, default_value_t = 90.0)]
    pub fov: f64,
    #[arg(long, default_value_t = 64)]
    pub resolution: usize,
    #[arg(long, value_enum, default_value_t = ProjectionArg::Pinhole)]
    pub projection: ProjectionArg,
    /// Output PNG.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    Trained,
    Oracle,
    Random,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, value_enum, default_value_t = PolicyArg::Trained)]
    pub policy: PolicyArg,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Render(a) => commands::render(&a),
        Command::Synth(a) => commands::synth(&a),
        Command::TrainSearch(a) => commands::train_search(&a),
        Command::EvalSearch(a) => commands::eval_search(&a),
        Command::TrainBcrl(a) => commands::train_bcrl(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if is_usage(&e) {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

fn is_usage(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        c.is::<UsageError>()
            || matches!(
                c.downcast_ref::<gazegym::Error>(),
                Some(gazegym::Error::Config(_) | gazegym::Error::InvalidView(_) | gazegym::Error::InvalidAction(_))
            )
    })
}
