//! `facd {train|eval|ablate|stats|count-params} --config <path>`
//!
//! Exit codes: 0 success, 1 I/O or internal failure, 2 configuration error,
//! 3 data error, 4 non-finite loss, 5 checkpoint mismatch.

mod commands;
mod config;

use clap::{Parser, Subcommand};
use facd_core::Error;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "facd", version, about = "Contrastive feature distillation for super-resolution")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a student (pretraining the teacher first if needed).
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Resume from this training-state checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on `eval_dir`.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Run one ablation axis over the configured seeds.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// components, attention, domain, similarity or adaptive
        #[arg(long)]
        axis: String,
    },
    /// Fraction of patches on which the teacher is worse than the student.
    Stats {
        #[arg(long)]
        config: PathBuf,
        /// Student checkpoint.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Teacher checkpoint; defaults to `teacher_ckpt` from the config.
        #[arg(long)]
        teacher: Option<PathBuf>,
    },
    /// Print exact parameter counts of the configured teacher and student.
    CountParams {
        #[arg(long)]
        config: PathBuf,
    },
}

/// A failure with the process exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self { code: 3, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) => 2,
            Error::EmptyDirectory(_) | Error::Decode { .. } | Error::ImageTooSmall { .. } => 3,
            Error::NonFiniteLoss { .. } => 4,
            Error::Checkpoint(_) | Error::Mismatch(_) => 5,
            Error::Shape(_) | Error::Io(_) => 1,
        };
        Self { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self { code: 1, message: e.to_string() }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train { config, checkpoint } => commands::train(&config, checkpoint),
        Command::Eval { config, checkpoint } => commands::eval(&config, &checkpoint),
        Command::Ablate { config, axis } => commands::ablate(&config, &axis),
        Command::Stats {
            config,
            checkpoint,
            teacher,
        } => commands::stats(&config, &checkpoint, teacher),
        Command::CountParams { config } => commands::count_params(&config),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
