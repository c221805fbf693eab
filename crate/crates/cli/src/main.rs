//! `bifnet`: synthetic data, separate training, merging, inference,
//! evaluation and the MNIST benchmark.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use bifnet_core::pipeline::MnistMode;
use bifnet_core::Error;
use clap::{Parser, Subcommand};

use config::{Overrides, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "bifnet", version, about = "Bifurcated patch networks for multi-abnormality segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a seeded synthetic dataset in the images/masks directory layout.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one abnormal-vs-normal network per class on the training split.
    TrainSeparate {
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Train only these classes (all loaded classes by default).
        #[arg(long = "class")]
        only: Vec<String>,
    },
    /// Merge separate networks and train both head sets over the shared primary.
    Merge {
        /// Separate network files, one per class, in class order.
        #[arg(long, num_args = 1.., required = true)]
        models: Vec<PathBuf>,
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Segment and classify one image with a merged model.
    Infer {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write every segmentation, classification and intersection map.
        #[arg(long)]
        debug_maps: bool,
    },
    /// Score a merged model (and optionally the separate networks) on labeled images.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Separate network files in class order, scored alongside.
        #[arg(long, num_args = 1..)]
        separate: Vec<PathBuf>,
        /// Score every image instead of the held-out split.
        #[arg(long)]
        all: bool,
    },
    /// Run the MNIST separate, merged or monolithic experiment.
    Mnist {
        #[arg(long)]
        mode: MnistMode,
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Digits trained in separate mode.
        #[arg(long, value_delimiter = ',')]
        digits: Option<Vec<usize>>,
        /// Reuse `digit_<d>.bfn` networks from this directory in merged mode.
        #[arg(long)]
        separate_dir: Option<PathBuf>,
    },
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Numeric(_) => 4,
        Error::Architecture(_)
        | Error::ModelFormat(_)
        | Error::Checksum { .. }
        | Error::Dimension { .. }
        | Error::State(_) => 3,
        _ => 2,
    }
}

fn run(cli: Cli) -> bifnet_core::Result<()> {
    let cfg = RunConfig::resolve(&cli.overrides)?;
    match cli.command {
        Command::Synth { out } => commands::synth(cfg, &out),
        Command::TrainSeparate { data_dir, out, only } => commands::train_separate(cfg, &data_dir, &out, &only),
        Command::Merge { models, data_dir, out } => commands::merge(cfg, &models, &data_dir, &out),
        Command::Infer {
            model,
            image,
            out,
            debug_maps,
        } => commands::infer(&model, &image, &out, debug_maps),
        Command::Evaluate {
            model,
            data_dir,
            out,
            separate,
            all,
        } => commands::evaluate(cfg, &model, &data_dir, &out, &separate, all),
        Command::Mnist {
            mode,
            data_dir,
            out,
            digits,
            separate_dir,
        } => commands::mnist(cfg, mode, &data_dir, &out, digits, separate_dir.as_deref()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
