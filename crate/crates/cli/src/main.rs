mod commands;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dynamo_core::Error;

/// Flags shared by every subcommand.
#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Flat JSON run configuration; unspecified fields take preset defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Preset the configuration starts from: paper, desk or tiny.
    #[arg(long, global = true, default_value = "desk")]
    pub preset: String,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Print the effective configuration as JSON and exit.
    #[arg(long, global = true)]
    pub print_config: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic dancer sequence into a dataset directory.
    SynthData(commands::SynthData),
    /// Validate a dataset directory and optionally ingest a normalized copy.
    Prepare(commands::Prepare),
    /// Train a model on a dataset directory.
    Train(commands::Train),
    /// Synthesize frames from a checkpoint and a dataset's poses.
    Synthesize(commands::Synthesize),
    /// Drive the trained actor with another actor's poses.
    Retarget(commands::Retarget),
    /// Score generated frames against ground truth.
    Evaluate(commands::Evaluate),
    /// Train and score one model per motion-window length.
    AblateWindow(commands::AblateWindow),
    /// Nearest-neighbour pose lookup baseline.
    BaselineNn(commands::BaselineNn),
}

#[derive(Parser, Debug)]
#[command(name = "dynamo", version, about = "Motion-conditioned pose-to-video synthesis")]
struct Root {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Shape(_) | Error::Dataset { .. } | Error::Json(_) | Error::Index { .. } => 2,
        _ => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let root = match Root::try_parse() {
        Ok(r) => r,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let c = &root.common;
    let result = match root.command {
        Command::SynthData(a) => commands::synth_data(c, &a),
        Command::Prepare(a) => commands::prepare(c, &a),
        Command::Train(a) => commands::train(c, &a),
        Command::Synthesize(a) => commands::synthesize(c, &a),
        Command::Retarget(a) => commands::retarget(c, &a),
        Command::Evaluate(a) => commands::evaluate(c, &a),
        Command::AblateWindow(a) => commands::ablate_window(c, &a),
        Command::BaselineNn(a) => commands::baseline_nn(c, &a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
