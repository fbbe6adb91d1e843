//! Command-line surface: data generation, depth statistics, training,
//! evaluation, ablations, sensitivity counts and the gradient check.

pub mod commands;
pub mod config;

use clap::{Parser, Subcommand};
use std::path::PathBuf;

pub use config::RunConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "rfpx", about = "RGB-D vision-language manipulation policy at toy scale", arg_required_else_help = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, clap::Args)]
pub struct Common {
    /// TOML run configuration; omitted keys take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory for this run (overrides RFPX_RUN_DIR and `run_dir`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides the model and training seeds.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Record expert demonstrations into a dataset directory.
    GenData {
        #[command(flatten)]
        common: Common,
        /// Number of trajectories (overrides `data.n`).
        #[arg(long)]
        n: Option<usize>,
    },
    /// Depth statistics of a dataset's frames.
    Stats {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Fixed normalization range `lo,hi`.
        #[arg(long, value_parser = parse_range)]
        range: Option<[f64; 2]>,
    },
    /// Imitation training; writes a checkpoint and per-epoch metrics.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset directory (overrides `data.dir`; without either the data is generated).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Depth statistics JSON (overrides `stats.file`).
        #[arg(long)]
        stats: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Chain evaluation of a checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Number of chains (overrides `eval.n_chains`).
        #[arg(long)]
        chains: Option<usize>,
        /// Palettes such as `D` or `ABC` (overrides `eval.palettes`).
        #[arg(long, value_parser = parse_palettes)]
        palettes: Option<PaletteList>,
    },
    /// Paired training and evaluation of two model variants.
    Ablate {
        #[command(subcommand)]
        which: Ablation,
    },
    /// Pixel-change counts of consecutive depth frames under several ranges.
    Sensitivity {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Normalization ranges, e.g. `0,1 0,10`.
        #[arg(long, num_args = 1.., value_parser = parse_range, required = true)]
        ranges: Vec<[f64; 2]>,
    },
    /// Finite-difference check of the full model's gradients.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Subcommand)]
pub enum Ablation {
    /// Shared resampler against separate RGB and depth resamplers.
    SepResampler {
        #[command(flatten)]
        common: Common,
    },
    /// Narrow against wide depth normalization ranges.
    DepthExtremes {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_range)]
        narrow: Option<[f64; 2]>,
        #[arg(long, value_parser = parse_range)]
        wide: Option<[f64; 2]>,
    },
}

fn parse_range(s: &str) -> Result<[f64; 2], String> {
    let (lo, hi) = s.split_once([',', ':']).ok_or_else(|| format!("expected lo,hi but got `{s}`"))?;
    let p = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("`{v}`: {e}"));
    Ok([p(lo)?, p(hi)?])
}

/// Palette letters given as one argument, e.g. `ABC` or `A,B,C`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PaletteList(pub Vec<rfpx::sim::Palette>);

fn parse_palettes(s: &str) -> Result<PaletteList, String> {
    rfpx::sim::parse_palettes(s).map(PaletteList).map_err(|e| e.to_string())
}

/// Runs the command line and returns the process exit code.
pub fn dispatch(args: &[String]) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_VALIDATION,
            };
        }
    };
    match commands::run(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                EXIT_VALIDATION
            } else {
                EXIT_RUNTIME
            }
        }
    }
}
