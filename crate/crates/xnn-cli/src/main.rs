//! `xnn` command-line tool: synthesize datasets, train the x-NN and its
//! control, evaluate checkpoints, and export attention heatmaps.
//!
//! Exit codes: 0 success, 2 usage/config, 3 data, 4 runtime/numeric.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use commands::SynthKind;
use config::ExperimentConfig;
use xnn_core::Error;

#[derive(Parser)]
#[command(name = "xnn", about = "Layer-stress learning head: train, evaluate, inspect")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Shallow,
    Deep,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic CSV dataset (header row; final `label` column).
    Synth {
        /// Which generator: a linearly separable task or an XOR-style task.
        #[arg(value_enum)]
        kind: KindArg,
        #[arg(long)]
        n: usize,
        /// Feature count.
        #[arg(long)]
        dim: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train from a JSON experiment config; writes checkpoints and history
    /// CSVs into the config's output directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Also train the matched control model (same trunk seed and splits).
        #[arg(long)]
        with_control: bool,
        /// Override the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override every seed in the config (model, shuffle, split).
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config's epoch count.
        #[arg(long)]
        epochs: Option<usize>,
        /// Write a self-contained plotting script beside the CSVs.
        #[arg(long)]
        emit_plot_script: bool,
    },
    /// Evaluate a checkpoint on a CSV; prints key=value metric lines.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "label")]
        label_column: String,
        /// Treat the file as headerless.
        #[arg(long)]
        no_header: bool,
    },
    /// Export per-head attention heatmap CSVs and the stress vector.
    Attn {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "label")]
        label_column: String,
        #[arg(long)]
        no_header: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config { .. } | Error::InvalidArgument { .. } => 2,
        Error::Data(_) | Error::Csv { .. } | Error::ShapeMismatch { .. } => 3,
        Error::Checkpoint { .. } | Error::NonFiniteLoss { .. } | Error::Io(_) => 4,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Synth {
            kind,
            n,
            dim,
            seed,
            out,
        } => {
            let kind = match kind {
                KindArg::Shallow => SynthKind::Shallow,
                KindArg::Deep => SynthKind::Deep,
            };
            commands::cmd_synth(kind, n, dim, seed, &out)
        }
        Command::Train {
            config,
            with_control,
            out,
            seed,
            epochs,
            emit_plot_script,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if with_control {
                cfg.with_control = true;
            }
            if emit_plot_script {
                cfg.emit_plot_script = true;
            }
            if let Some(dir) = out {
                cfg.output_dir = dir;
            }
            if let Some(epochs) = epochs {
                cfg.train.epochs = epochs;
            }
            // Seed precedence: --seed flag, then XNN_SEED, then the config.
            if let Some(seed) = seed {
                cfg.override_seeds(seed);
            } else if let Some(seed) = read_env_seed()? {
                cfg.override_seeds(seed);
            }
            commands::cmd_train(&cfg)
        }
        Command::Eval {
            checkpoint,
            data,
            label_column,
            no_header,
        } => commands::cmd_eval(&checkpoint, &data, &label_column, !no_header),
        Command::Attn {
            checkpoint,
            data,
            label_column,
            no_header,
            out,
        } => commands::cmd_attn(&checkpoint, &data, &label_column, !no_header, &out),
    }
}

fn read_env_seed() -> Result<Option<u64>, Error> {
    match std::env::var("XNN_SEED") {
        Ok(text) => text
            .trim()
            .parse::<u64>()
            .map(Some)
            .map_err(|_| Error::Config {
                field: "XNN_SEED".into(),
                message: format!("cannot parse `{text}` as an unsigned integer"),
            }),
        Err(_) => Ok(None),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
