//! `virtview` command-line front end.

mod commands;
mod detectors;
mod error;
mod imaging;
mod selftest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Dataset root used when `--dataset` is not given.
pub const DATASET_ENV: &str = "VIRTVIEW_DATASET";

#[derive(Parser, Debug)]
#[command(
    name = "virtview",
    version,
    about = "Virtual-view monocular 3D detection toolkit"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalArgs {
    /// Configuration file of `key = value` lines.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one configuration key; repeatable, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Seed for every random stream (overrides `seed` from the configuration).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 1 runs everything on the calling thread.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct DatasetArg {
    /// Root of a KITTI-layout dataset (image_2/, label_2/, calib/).
    #[arg(long, env = DATASET_ENV)]
    pub dataset: PathBuf,
    /// Image size used when a frame has no image, as WIDTHxHEIGHT.
    #[arg(long, default_value = "1242x375", value_parser = parse_size)]
    pub image_size: (u32, u32),
}

#[derive(Args, Debug, Clone)]
pub struct FrameSelect {
    /// A single frame id.
    #[arg(long, conflicts_with = "split")]
    pub frame: Option<String>,
    /// A file of frame ids, one per line.
    #[arg(long)]
    pub split: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum ViewMode {
    Inference,
    Training,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic KITTI-layout dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        frames: usize,
        /// Also render flat-shaded images into image_2/.
        #[arg(long)]
        render: bool,
        #[arg(long, default_value = "1242x375", value_parser = parse_size)]
        image_size: (u32, u32),
    },
    /// Write virtual views and their sidecar records.
    Views {
        #[command(flatten)]
        data: DatasetArg,
        #[command(flatten)]
        select: FrameSelect,
        #[arg(long, value_enum, default_value = "inference")]
        mode: ViewMode,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the detection pipeline and write KITTI result files.
    Infer {
        #[command(flatten)]
        data: DatasetArg,
        #[command(flatten)]
        select: FrameSelect,
        /// `oracle`, or `stub:DIR` replaying `DIR/<frame>.vvrd` head outputs.
        #[arg(long, default_value = "oracle")]
        detector: String,
        #[arg(long)]
        out: PathBuf,
        /// Also write the raw head outputs of every frame to this directory.
        #[arg(long)]
        dump_raw: Option<PathBuf>,
    },
    /// Evaluate result files against ground-truth labels.
    Eval {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Directory for report.csv and precision/recall files.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Split a dataset's labels by object depth.
    Split {
        #[command(flatten)]
        data: DatasetArg,
        /// Named split: far-near, near-far or nearfar-middle.
        #[arg(long, conflicts_with_all = ["train_range", "val_range"])]
        kind: Option<String>,
        /// Training depth intervals, e.g. `0-10,20-40`.
        #[arg(long, requires = "val_range")]
        train_range: Option<String>,
        #[arg(long, requires = "train_range")]
        val_range: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the built-in property checks.
    Selftest {
        /// Scenes used by the end-to-end check.
        #[arg(long, default_value_t = 20)]
        scenes: usize,
    },
    /// Print the effective configuration.
    Config,
}

fn parse_size(s: &str) -> Result<(u32, u32), String> {
    let (w, h) = s.split_once('x').ok_or("expected WIDTHxHEIGHT")?;
    let w: u32 = w.parse().map_err(|_| format!("bad width {w:?}"))?;
    let h: u32 = h.parse().map_err(|_| format!("bad height {h:?}"))?;
    if w == 0 || h == 0 {
        return Err("image size must be positive".into());
    }
    Ok((w, h))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
