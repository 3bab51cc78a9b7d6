//! Command-line front end: generate synthetic corpora, train, evaluate,
//! score individual clouds, and run the ablation grid.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dnet::Error;
use dnet::geometry::{Rotation, Split};

use commands::{AblateArgs, EvalArgs, GenDataArgs, ScoreArgs, TrainArgs};
use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "dnet",
    about = "Point-cloud shape classification with distinctive-point attention",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic eight-class shape corpus.
    GenData {
        /// Output directory (gets train/, test/, manifest.csv).
        #[arg(long)]
        out: PathBuf,
        /// Training clouds per class.
        #[arg(long, default_value_t = 100)]
        per_class: usize,
        /// Test clouds per class.
        #[arg(long, default_value_t = 20)]
        test_per_class: usize,
        /// Points per cloud.
        #[arg(long, default_value_t = 256)]
        points: usize,
        /// Coordinate noise standard deviation.
        #[arg(long, default_value_t = 0.02)]
        noise: f32,
        /// Pose randomisation: none, z, or full.
        #[arg(long, default_value = "z")]
        rotation: String,
        /// Corpus seed.
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Train a classifier on a generated corpus.
    Train {
        /// Corpus directory or manifest file.
        #[arg(long)]
        data: PathBuf,
        /// Output directory for checkpoints, metrics, and the resolved config.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        /// Weight initialisation seed.
        #[arg(long, default_value_t = 1)]
        model_seed: u64,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Suppress per-epoch output.
        #[arg(long)]
        quiet: bool,
    },
    /// Report a checkpoint's accuracy on one corpus split.
    Eval {
        /// Corpus directory or manifest file.
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint to evaluate.
        #[arg(long)]
        ckpt: PathBuf,
        /// Which split: train or test.
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Score one cloud: prediction, distinction scores, fusion weights.
    Score {
        /// Checkpoint to score with.
        #[arg(long)]
        ckpt: PathBuf,
        /// Cloud file (xyz text).
        #[arg(long)]
        cloud: PathBuf,
        /// Also write a PLY with a per-point distinction scalar.
        #[arg(long)]
        ply: Option<PathBuf>,
        /// How many top/bottom point indices to print.
        #[arg(long, default_value_t = 8)]
        top: usize,
        /// Print every parameter with its shape and norm.
        #[arg(long)]
        dump_weights: bool,
    },
    /// Train the ablation grid and write a CSV of accuracies.
    Ablate {
        /// Corpus directory or manifest file.
        #[arg(long)]
        data: PathBuf,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated groups: sampling, gate, fusion, sets, k, n1, all.
        #[arg(long, default_value = "all")]
        groups: String,
        /// Model seeds per cell.
        #[arg(long, default_value_t = 3)]
        seeds: u64,
        /// Suppress per-cell output.
        #[arg(long)]
        quiet: bool,
    },
}

/// Options shared by the training-style commands.
#[derive(Args)]
struct RunArgs {
    /// Run configuration file (flat `key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override train.epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Override train.lr.
    #[arg(long)]
    lr: Option<f32>,
    /// Override train.batch_size.
    #[arg(long)]
    batch: Option<usize>,
    /// Override train.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Feed surface normals to the model (6-column clouds required).
    #[arg(long)]
    normals: bool,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig, Error> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        if let Some(epochs) = self.epochs {
            cfg.train.epochs = epochs;
        }
        if let Some(lr) = self.lr {
            cfg.train.lr = lr;
        }
        if let Some(batch) = self.batch {
            cfg.train.batch_size = batch;
        }
        if let Some(seed) = self.seed {
            cfg.train.seed = seed;
        }
        if self.normals {
            cfg.model.with_normals = true;
        }
        Ok(cfg)
    }
}

fn parse_rotation(s: &str) -> Result<Rotation, Error> {
    match s {
        "none" => Ok(Rotation::None),
        "z" => Ok(Rotation::AboutZ),
        "full" => Ok(Rotation::Full),
        _ => Err(Error::Config(format!("rotation must be none|z|full, got {s:?}"))),
    }
}

fn parse_split(s: &str) -> Result<Split, Error> {
    Split::parse(s).ok_or_else(|| Error::Config(format!("split must be train|test, got {s:?}")))
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::GenData { out, per_class, test_per_class, points, noise, rotation, seed } => {
            commands::gen_data(&GenDataArgs {
                out,
                train_per_class: per_class,
                test_per_class,
                points,
                noise,
                rotation: parse_rotation(&rotation)?,
                seed,
            })
        }
        Command::Train { data, out, run, model_seed, resume, quiet } => {
            commands::train(&TrainArgs { data, out, config: run.resolve()?, resume, model_seed, quiet })
        }
        Command::Eval { data, ckpt, split } => {
            commands::eval(&EvalArgs { data, ckpt, split: parse_split(&split)? })
        }
        Command::Score { ckpt, cloud, ply, top, dump_weights } => {
            commands::score(&ScoreArgs { ckpt, cloud, ply, top, dump_weights })
        }
        Command::Ablate { data, out, run, groups, seeds, quiet } => {
            commands::ablate(&AblateArgs {
                data,
                out,
                config: run.resolve()?,
                groups: groups.split(',').map(|g| g.trim().to_string()).collect(),
                seeds,
                quiet,
            })
        }
    }
}

/// 0 success, 1 runtime failure, 2 bad configuration, 3 file problems.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::ConfigMismatch(_) | Error::Param { .. } | Error::State(_) => 2,
        Error::Io { .. }
        | Error::Parse { .. }
        | Error::CkptMagic { .. }
        | Error::CkptVersion { .. }
        | Error::CkptTruncated { .. }
        | Error::CkptTensor { .. } => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
