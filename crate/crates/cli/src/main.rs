use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use subspacenet::dataio::Split;
use subspacenet_cli::commands::{self, Input};
use subspacenet_cli::overrides::{Overrides, SeedTarget};
use subspacenet_cli::CliError;

#[derive(Debug, Parser)]
#[command(name = "subspacenet", version, about = "Learned embeddings for multi-type subspace clustering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    overrides: Overrides,
    /// Log progress (per-epoch records, skipped instances) to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
}

#[derive(Debug, clap::Args)]
struct InputArgs {
    /// A single instance JSON file.
    #[arg(long, conflicts_with = "data")]
    instance: Option<PathBuf>,
    /// A dataset directory (with manifest.json).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: Split,
}

impl InputArgs {
    fn input(&self) -> Result<Input, CliError> {
        match (&self.instance, &self.data) {
            (Some(p), _) => Ok(Input::Instance(p.clone())),
            (None, Some(d)) => Ok(Input::Dataset { dir: d.clone(), split: self.split }),
            (None, None) => Err(CliError::Validation("pass --instance or --data".into())),
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Gen {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a network on the train split (validating on val when present).
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Embed and cluster instances with a trained network.
    Cluster {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the K-means residual curve and the SOD choice per instance.
    Curve {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions against ground truth.
    Eval {
        /// Output directory of `cluster` or `baseline`.
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sequential RANSAC baseline.
    Baseline {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Leave-one-out: train on all but one instance, test on the held-out one.
    Loocv {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "train")]
        split: Split,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let o = &cli.overrides;
    match cli.command {
        Command::Gen { out } => commands::cmd_gen(&o.resolve(SeedTarget::Gen)?, &out),
        Command::Train { data, out, resume } => {
            let s = commands::cmd_train(&o.resolve(SeedTarget::Train)?, &data, &out, resume.as_deref())?;
            println!(
                "trained {} epochs, final loss {:.6}, {:.1}s",
                s.epochs, s.final_train_loss, s.wall_seconds
            );
            Ok(())
        }
        Command::Cluster { checkpoint, input, out } => {
            let preds = commands::cmd_cluster(&o.resolve(SeedTarget::Inference)?, &checkpoint, &input.input()?, &out)?;
            for p in &preds {
                println!("{}\tk={}", p.name, p.k);
            }
            Ok(())
        }
        Command::Curve { checkpoint, input, out } => {
            let picks = commands::cmd_curve(&o.resolve(SeedTarget::Inference)?, &checkpoint, &input.input()?, &out)?;
            for (name, k) in &picks {
                println!("{name}\tk={k}");
            }
            Ok(())
        }
        Command::Eval { pred, data, split, out } => {
            let rows = commands::cmd_eval(&pred, &data, split, &out)?;
            let s = subspacenet::metrics::summarize(&rows.iter().map(|r| r.1).collect::<Vec<_>>());
            println!(
                "{} instances: error {:.4} (median {:.4}), nmi {:.4}, f {:.4}",
                s.count, s.mean.error_rate, s.median.error_rate, s.mean.nmi, s.mean.fmeasure
            );
            Ok(())
        }
        Command::Baseline { input, out } => {
            let preds = commands::cmd_baseline(&o.resolve(SeedTarget::Baseline)?, &input.input()?, &out)?;
            println!("fitted {} instances", preds.len());
            Ok(())
        }
        Command::Loocv { data, split, out } => {
            let rows = commands::cmd_loocv(&o.resolve(SeedTarget::Train)?, &data, split, &out)?;
            let s = subspacenet::metrics::summarize(&rows.iter().map(|r| r.1).collect::<Vec<_>>());
            println!("{} folds: error {:.4}, nmi {:.4}", s.count, s.mean.error_rate, s.mean.nmi);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn };
    env_logger::Builder::new().filter_level(level).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
