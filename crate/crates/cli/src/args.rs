use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use p4dfd_core::model::Variant;

#[derive(Debug, Parser)]
#[command(
    name = "p4dfd",
    version,
    about = "Phase-aware frequency-domain deepfake detection"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic phase-perturbation dataset as `real/` and `fake/` PPM folders
    Synth(SynthArgs),
    /// Train one variant; writes checkpoint.p4df, train_log.csv and config.json under --out
    Train(RunArgs),
    /// Evaluate a checkpoint and print its metrics as JSON
    Eval(EvalArgs),
    /// Train and evaluate all seven variants; writes ablation.csv and one checkpoint per variant
    Ablate(AblateArgs),
    /// Dump the magnitude, phase and LBP maps of one image as PGM plus min/max stats
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    /// Images per class
    #[arg(long, default_value_t = 64)]
    pub n: usize,
    /// Image side length in pixels
    #[arg(long, default_value_t = 64)]
    pub side: usize,
    /// Random seed
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Phase offsets of fakes are drawn from U(-s*pi, s*pi)
    #[arg(long, default_value_t = 0.3)]
    pub strength: f64,
}

/// Run settings. Precedence: built-in defaults, then the --config file, then
/// these flags. Defaults shown are the built-in ones.
#[derive(Debug, Default, Args)]
pub struct RunArgs {
    /// JSON run config; unknown keys are rejected [default: none]
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training images, as `real/` and `fake/` folders [default: none]
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Held-out images, same layout [default: none]
    #[arg(long)]
    pub test_data: Option<PathBuf>,
    /// Output directory [default: none]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Model variant, by slug or display name [default: rgb-fft-lbp-phase]
    #[arg(long, value_parser = parse_variant)]
    pub variant: Option<Variant>,
    /// Input side length; images are resized to it [default: 64]
    #[arg(long)]
    pub side: Option<usize>,
    /// Epochs with the backbone frozen [default: 5]
    #[arg(long)]
    pub stage1_epochs: Option<usize>,
    /// Epochs with every group trainable [default: 15]
    #[arg(long)]
    pub stage2_epochs: Option<usize>,
    /// Samples per optimizer step [default: 16]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Peak learning rate of the new modules [default: 0.001]
    #[arg(long)]
    pub lr_new: Option<f64>,
    /// Peak learning rate of the backbone [default: 0.0001]
    #[arg(long)]
    pub lr_backbone: Option<f64>,
    /// Random seed for initialisation, shuffling and augmentation [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Train without augmentation [default: augmentation on]
    #[arg(long)]
    pub no_augment: bool,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Share of --data held out when no --test-data is given [default: 0.25]
    #[arg(long)]
    pub test_fraction: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint written by `train` or `ablate`
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Images to score, as `real/` and `fake/` folders
    #[arg(long)]
    pub data: PathBuf,
    /// Also write metrics.json and metrics.csv here [default: none]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    /// PPM or PGM image
    #[arg(long)]
    pub image: PathBuf,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    /// LBP sigmoid temperature
    #[arg(long, default_value_t = p4dfd_core::texture::DEFAULT_TAU)]
    pub tau: f64,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: p4dfd_core::Error| e.to_string())
}
