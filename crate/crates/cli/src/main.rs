//! `seeclip`: one binary for the whole workflow. Every failure leaves a
//! machine-readable JSON line on stderr and an exit code by failure class
//! (1 config, 2 data, 3 numeric divergence).

mod commands;
mod plot;

use clap::{Args, Parser, Subcommand};
use seeclip_core::config::{resolve_config, RunConfig};
use seeclip_core::{Error, ErrorClass};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "seeclip",
    version,
    about = "Open-set domain generalization with semantically enhanced prompts"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct ConfigArgs {
    /// Run configuration file (TOML).
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override the training and generation seeds.
    #[arg(long)]
    seed: Option<u64>,
    /// Dotted-path config override, e.g. --set hyper.epochs=3 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory, overriding the config's output_dir.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

impl ConfigArgs {
    fn resolve(&self) -> seeclip_core::Result<RunConfig> {
        resolve_config(self.config.as_deref(), &self.set, self.seed, self.out.as_deref())
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train on the source domains of one leave-one-domain-out split.
    Train {
        #[command(flatten)]
        common: ConfigArgs,
        /// Which domain to hold out as the target.
        #[arg(long, default_value_t = 0)]
        split: usize,
    },
    /// Evaluate a checkpoint on a split's held-out target domain.
    Evaluate {
        #[command(flatten)]
        common: ConfigArgs,
        /// Checkpoint archive written by `train` or `protocol`.
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 0)]
        split: usize,
    },
    /// Run the full leave-one-domain-out protocol and summarize it.
    Protocol {
        #[command(flatten)]
        common: ConfigArgs,
    },
    /// Generate pseudo-unknown samples from a trained checkpoint.
    Generate {
        #[command(flatten)]
        common: ConfigArgs,
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        /// Samples per (source domain, known class) pair.
        #[arg(long, default_value_t = 3)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        split: usize,
    },
    /// Report prompt discrepancies and export attention maps.
    Diagnose {
        #[command(flatten)]
        common: ConfigArgs,
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 0)]
        split: usize,
        /// Cap on the number of attention CSVs.
        #[arg(long, default_value_t = 8)]
        limit: usize,
    },
    /// Write the configured synthetic dataset as a tensor archive.
    MakeSynthetic {
        #[command(flatten)]
        common: ConfigArgs,
    },
    /// Render loss curves, metric bars, and attention heatmaps as PNGs.
    Plot {
        /// Directory holding the artifacts of an earlier run.
        #[arg(long, value_name = "DIR")]
        run_dir: PathBuf,
        /// Where the images go; defaults to <run_dir>/plots.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> seeclip_core::Result<()> {
    match cli.command {
        Command::Train { common, split } => commands::cmd_train(&common.resolve()?, split),
        Command::Evaluate { common, checkpoint, split } => {
            commands::cmd_evaluate(&common.resolve()?, &checkpoint, split)
        }
        Command::Protocol { common } => commands::cmd_protocol(&common.resolve()?),
        Command::Generate { common, checkpoint, count, split } => {
            commands::cmd_generate(&common.resolve()?, &checkpoint, count, split)
        }
        Command::Diagnose { common, checkpoint, split, limit } => {
            commands::cmd_diagnose(&common.resolve()?, &checkpoint, split, limit)
        }
        Command::MakeSynthetic { common } => {
            commands::cmd_make_synthetic(&common.resolve()?)
        }
        Command::Plot { run_dir, out } => commands::cmd_plot(&run_dir, out.as_deref()),
    }
}

fn exit_code(e: &Error) -> u8 {
    match e.class() {
        ErrorClass::Config => 1,
        ErrorClass::Data => 2,
        ErrorClass::Numeric => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            // bad flags are config errors like any other
            let msg = e.render().to_string();
            let json = serde_json::json!({
                "error": { "code": 1, "kind": "config", "message": msg.trim() }
            });
            eprintln!("{json}");
            return ExitCode::from(1);
        }
        Err(e) => {
            // --help and --version land here
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            let json = serde_json::json!({
                "error": { "code": code, "kind": e.code(), "message": e.to_string() }
            });
            eprintln!("{json}");
            ExitCode::from(code)
        }
    }
}
