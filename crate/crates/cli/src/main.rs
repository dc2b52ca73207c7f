//! `hier-reid {synth|train|enroll|identify|eval|elbow}`
//!
//! Exit codes: 0 success, 2 usage, 3 degenerate training pairs, 4 unreadable or
//! malformed input, 5 invalid parameters, 6 shape mismatch, 7 inconsistent
//! data, 1 anything else.

mod commands;
mod manifest;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hier_reid::Error;

#[derive(Debug, Parser)]
#[command(
    name = "hier-reid",
    version,
    about = "Hierarchical person re-identification experiments"
)]
struct Cli {
    /// TOML file with one table per command; flags take precedence
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Log progress (repeat for debug output)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a synthetic two-camera dataset
    Synth(settings::SynthArgs),
    /// Train the Siamese network on sampled frame pairs
    Train(settings::TrainArgs),
    /// Build a gallery archive from the gallery side of a split
    Enroll(settings::EnrollArgs),
    /// Identify one probe sequence against a gallery
    Identify(settings::IdentifyArgs),
    /// Run the (K, kappa) sweep and optional clustering ablation
    Eval(settings::EvalArgs),
    /// Clustering error over a list of K values
    Elbow(settings::ElbowArgs),
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::DegeneratePairs(_) => 3,
        Error::Format { .. }
        | Error::Io { .. }
        | Error::RawIo(_)
        | Error::Image { .. }
        | Error::Csv(_)
        | Error::Json(_)
        | Error::EmptyDataset(_)
        | Error::LayoutMismatch { .. }
        | Error::BadFrame(_)
        | Error::AllBackground => 4,
        Error::BadK { .. }
        | Error::BadKappa { .. }
        | Error::BadClusterId { .. }
        | Error::BadConfig(_)
        | Error::BadTrainConfig(_)
        | Error::BadTarget { .. }
        | Error::PolicyInfeasible(_)
        | Error::InsufficientFrames(_)
        | Error::InsufficientSubjects(_) => 5,
        Error::ShapeUnderflow { .. }
        | Error::ShapeMismatch { .. }
        | Error::DimensionMismatch { .. } => 6,
        Error::EmptySequence
        | Error::EmptyProbe
        | Error::DuplicateId(_)
        | Error::UnassignedId(_)
        | Error::UnknownGroundTruth(_) => 7,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let config = cli.config.as_deref();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a, config),
        Command::Train(a) => commands::train(a, config),
        Command::Enroll(a) => commands::enroll(a, config),
        Command::Identify(a) => commands::identify(a, config),
        Command::Eval(a) => commands::eval(a, config),
        Command::Elbow(a) => commands::elbow(a, config),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(e.downcast_ref::<Error>().map_or(1, exit_code))
        }
    }
}

/// Reports a usage problem found after flags and config were merged; exits 2.
fn usage(msg: impl std::fmt::Display) -> ! {
    use clap::CommandFactory;
    Cli::command()
        .error(clap::error::ErrorKind::ValueValidation, msg.to_string())
        .exit()
}
