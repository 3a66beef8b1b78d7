//! `guiagent`: run episodes, score trajectories, synthesize data, check PWCE.
//!
//! JSON results go to stdout, logs to stderr (`RUST_LOG` controls verbosity).
//!
//! Exit codes: 0 success or answer, 1 episode ended without success,
//! 2 step budget exhausted, 3 model/environment/teacher failure,
//! 64 usage or configuration error, 65 invalid input data.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 64,
            CliError::Data(_) => 65,
            CliError::Runtime(_) => 3,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(
    name = "guiagent",
    version,
    about = "GUI-agent runtime: episodes, rewards, PWCE and data synthesis"
)]
struct Cli {
    /// TOML config with [pwce], [reward], [episode] and [endpoints.*] tables.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one episode, or a batch of episodes, and write trajectory JSONL.
    Run(RunArgs),
    /// Score a trajectory against per-step labels.
    Score(ScoreArgs),
    /// Intricate-layout grounding augmentation.
    Ilg {
        #[command(subcommand)]
        command: IlgCommand,
    },
    /// Teacher-driven data synthesis.
    Synth {
        #[command(subcommand)]
        command: SynthCommand,
    },
    /// Perplexity-weighted cross-entropy utilities.
    Pwce {
        #[command(subcommand)]
        command: PwceCommand,
    },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    End2end,
    Mas,
    PolicyExecutor,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum PlannerPrompt {
    Androidworld,
    Miniwob,
    Osworld,
    AndroidworldGpt5,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    #[arg(long, value_enum, default_value = "end2end")]
    pub mode: ModeArg,
    /// Task goal in natural language.
    #[arg(long, required_unless_present = "batch")]
    pub goal: Option<String>,
    /// Environment: `mock:PATH` to a mock script JSON.
    #[arg(long, required_unless_present = "batch")]
    pub env: Option<String>,
    /// Model endpoint (executor in policy-executor mode): URL, `mock:PATH`, or a name under [endpoints].
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Planner endpoint for policy-executor mode.
    #[arg(long)]
    pub planner_endpoint: Option<String>,
    /// Planner system prompt for policy-executor mode.
    #[arg(long, value_enum, default_value = "androidworld")]
    pub planner_prompt: PlannerPrompt,
    /// Trajectory output path.
    #[arg(long, required_unless_present = "batch")]
    pub out: Option<PathBuf>,
    /// Recorded in the metadata sidecar; episodes themselves are deterministic.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Overrides [episode].t_max.
    #[arg(long)]
    pub t_max: Option<u32>,
    /// JSONL of {"goal", "env", "out"} episodes to run instead of a single one.
    #[arg(long, conflicts_with_all = ["goal", "env", "out"])]
    pub batch: Option<PathBuf>,
    /// Episodes run in parallel in batch mode.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Args, Debug)]
pub struct ScoreArgs {
    /// Trajectory JSONL written by `run`.
    #[arg(long)]
    pub traj: PathBuf,
    /// JSONL of {"t", "tag", "truth", "role"?} labels.
    #[arg(long)]
    pub labels: PathBuf,
    /// Also write the report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum IlgCommand {
    /// Composite N grounding samples onto enhanced backgrounds.
    Synth(IlgArgs),
}

#[derive(Args, Debug)]
pub struct IlgArgs {
    /// Directory with meta.jsonl ({"image", "point", "description"}) and its images.
    #[arg(long)]
    pub meta: PathBuf,
    /// Directory of background PNGs.
    #[arg(long)]
    pub backgrounds: PathBuf,
    /// Number of samples.
    #[arg(long)]
    pub n: usize,
    /// Distractors inserted per sample.
    #[arg(long, default_value_t = 3)]
    pub distractors: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory (samples.jsonl and images/).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Subcommand, Debug)]
enum SynthCommand {
    /// Prompt a teacher for each input record and keep validated outputs.
    Data(SynthArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// ata, lcc, su, gp or sg.
    #[arg(long)]
    pub task: guiagent_core::synthesis::SynthesisTask,
    /// Input JSONL of synthesis inputs.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Output JSONL of synthesized records.
    #[arg(long)]
    pub out: PathBuf,
    /// Teacher endpoint: URL, `mock:PATH`, or a name under [endpoints].
    #[arg(long)]
    pub endpoint: String,
    /// Extra asks after a format violation.
    #[arg(long, default_value_t = 2)]
    pub retries: u32,
    /// Teacher calls in flight.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Subcommand, Debug)]
enum PwceCommand {
    /// Compute the loss report for a JSON token batch.
    Check(PwceArgs),
}

#[derive(Args, Debug)]
pub struct PwceArgs {
    /// JSON {"logits": [[[..]]], "labels": [[..]], "mask": [[..]]}.
    #[arg(long)]
    pub batch: PathBuf,
    /// Include the gradient with respect to the logits.
    #[arg(long)]
    pub gradient: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // clap's own status 2 would collide with the max_steps exit code
            return ExitCode::from(if e.use_stderr() { 64 } else { 0 });
        }
    };
    let result = config::Config::load(cli.config.as_deref()).and_then(|cfg| match cli.command {
        Command::Run(a) => commands::run::execute(&a, &cfg),
        Command::Score(a) => commands::score::execute(&a, &cfg),
        Command::Ilg {
            command: IlgCommand::Synth(a),
        } => commands::ilg::execute(&a, &cfg),
        Command::Synth {
            command: SynthCommand::Data(a),
        } => commands::synth::execute(&a, &cfg),
        Command::Pwce {
            command: PwceCommand::Check(a),
        } => commands::pwce::execute(&a, &cfg),
    });
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
