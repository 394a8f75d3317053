//! Command-line driver for projected-gradient unlearning experiments:
//! JSON configs, binary checkpoints and Gram caches, CSV/JSON outputs.

pub mod commands;
pub mod config;
pub mod error;
pub mod persist;

use std::collections::BTreeSet;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use commands::{Context, Outcome};
pub use config::ExperimentConfig;
pub use error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "pgu", version, about = "Projected-gradient unlearning pipelines")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct Common {
    /// Experiment configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; defaults to the config's `output_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides the config's global seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train on the full data and cache the full-data Gram.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Train from scratch without the listed forget samples.
    Retrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        forget: Vec<PathBuf>,
    },
    /// Write forget manifests for the configured split.
    Split {
        #[command(flatten)]
        common: Common,
    },
    /// Unlearn one forget manifest, or several as incremental rounds.
    Unlearn {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        gram: Option<PathBuf>,
        #[arg(long)]
        forget: Vec<PathBuf>,
    },
    /// Readout report for a checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        forget: Vec<PathBuf>,
        /// Comma-separated classes left out of the retain-test error.
        #[arg(long, value_delimiter = ',')]
        exclude_classes: Option<Vec<usize>>,
    },
    /// Shadow-model membership inference before and after unlearning.
    Mia {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        forget: Option<PathBuf>,
    },
    /// Unlearn poisoned labels recorded by `train`.
    Depoison {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        gram: Option<PathBuf>,
        /// Poison manifest; defaults to `<out>/poison.json`.
        #[arg(long)]
        forget: Option<PathBuf>,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Train { common }
            | Command::Retrain { common, .. }
            | Command::Split { common }
            | Command::Unlearn { common, .. }
            | Command::Eval { common, .. }
            | Command::Mia { common, .. }
            | Command::Depoison { common, .. } => common,
        }
    }
}

/// Loads the config and dispatches one command.
pub fn run(cli: &Cli) -> Result<Outcome> {
    let common = cli.command.common();
    let config = ExperimentConfig::load(&common.config)?;
    let ctx = Context::new(config, common.out.clone(), common.seed);
    match &cli.command {
        Command::Train { .. } => commands::cmd_train(&ctx),
        Command::Retrain { forget, .. } => commands::cmd_retrain(&ctx, forget),
        Command::Split { .. } => commands::cmd_split(&ctx),
        Command::Unlearn { checkpoint, gram, forget, .. } => {
            commands::cmd_unlearn(&ctx, checkpoint.as_deref(), gram.as_deref(), forget)
        }
        Command::Eval { checkpoint, forget, exclude_classes, .. } => {
            let exclude = exclude_classes.as_ref().map(|v| v.iter().copied().collect::<BTreeSet<_>>());
            commands::cmd_eval(&ctx, checkpoint.as_deref(), forget, exclude)
        }
        Command::Mia { forget, .. } => commands::cmd_mia(&ctx, forget.as_deref()),
        Command::Depoison { checkpoint, gram, forget, .. } => {
            commands::cmd_depoison(&ctx, checkpoint.as_deref(), gram.as_deref(), forget.as_deref())
        }
    }
}
