use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use advsal_core::attacks::PgdLoss;
use advsal_core::attention::{ChannelReduction, MapKind, MapOutput};
use advsal_core::BackpropMode;

#[derive(Debug, Parser)]
#[command(name = "advsal", version, about = "Attention maps of clean and adversarial images")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a mini-ResNet and write a checkpoint.
    #[command(args_override_self = true)]
    Train(TrainArgs),
    /// Attack images and record verified results.
    #[command(args_override_self = true)]
    Attack(AttackArgs),
    /// Attention maps and overlays for clean images.
    #[command(args_override_self = true)]
    Explain(ExplainArgs),
    /// Full pipeline: predict, attack, verify, map, compare, render.
    #[command(args_override_self = true)]
    Compare(CompareArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Flat `key = value` file; each key is a long flag name. Flags given on
    /// the command line win.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Worker threads for per-image and per-sample work (0 = all cores).
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// `synthetic`, or a CIFAR-10 binary batch file or directory of `*.bin` batches.
    #[arg(long, default_value = "synthetic")]
    pub data: String,
    /// Keep the first N samples only.
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long, default_value_t = 2)]
    pub classes: usize,
    /// Side of the synthetic images.
    #[arg(long, default_value_t = 16)]
    pub size: usize,
    #[arg(long, default_value_t = 400)]
    pub count: usize,
    #[arg(long, default_value_t = 3)]
    pub channels: usize,
    #[arg(long, default_value_t = 0)]
    pub data_seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    /// Parent directory of run directories.
    #[arg(long, env = "ADVSAL_OUTPUT_ROOT", default_value = "runs")]
    pub out_root: PathBuf,
    /// Run directory name; defaults to the start time in unix seconds.
    #[arg(long)]
    pub run_name: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct Selection {
    /// First dataset index to process.
    #[arg(long, default_value_t = 0)]
    pub offset: usize,
    /// Number of images to process.
    #[arg(long, default_value_t = 10)]
    pub images: usize,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Metrics log; defaults to the checkpoint path with `.log.tsv` appended.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 0.2)]
    pub val_fraction: f64,
    #[arg(long, default_value_t = 2)]
    pub blocks: usize,
    #[arg(long, default_value_t = 8)]
    pub width: usize,
    /// Seeds initialization and shuffling.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AttackName {
    Pgd,
    Pixel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LossName {
    Ce,
    SoftLabel,
}

impl From<LossName> for PgdLoss {
    fn from(l: LossName) -> Self {
        match l {
            LossName::Ce => PgdLoss::CrossEntropy,
            LossName::SoftLabel => PgdLoss::SoftLabel,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct AttackOptions {
    #[arg(long, value_enum)]
    pub attack: AttackName,
    /// L-inf budget for PGD.
    #[arg(long, default_value_t = 0.1)]
    pub threshold: f64,
    /// Pixel budget for the pixel attack.
    #[arg(long, default_value_t = 5)]
    pub pixels: usize,
    /// Targeted attack towards this class.
    #[arg(long)]
    pub target: Option<usize>,
    #[arg(long, default_value_t = 40)]
    pub iterations: usize,
    /// PGD step; defaults to threshold / 10.
    #[arg(long)]
    pub step: Option<f64>,
    #[arg(long)]
    pub no_random_start: bool,
    #[arg(long, value_enum, default_value_t = LossName::Ce)]
    pub loss: LossName,
    #[arg(long, default_value_t = 75)]
    pub population: usize,
    #[arg(long, default_value_t = 30)]
    pub generations: usize,
    /// DE differential weight.
    #[arg(long, default_value_t = 0.5)]
    pub weight: f64,
    /// DE crossover rate.
    #[arg(long, default_value_t = 0.9)]
    pub crossover: f64,
    /// Base seed; image `i` uses `seed ^ i`.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindChoice {
    Sm,
    Gradcam,
    Both,
}

impl KindChoice {
    pub fn kinds(self) -> Vec<MapKind> {
        match self {
            KindChoice::Sm => vec![MapKind::Saliency],
            KindChoice::Gradcam => vec![MapKind::GradCam],
            KindChoice::Both => vec![MapKind::Saliency, MapKind::GradCam],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Basis {
    Predicted,
    True,
    Adversarial,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeName {
    Standard,
    Deconv,
    Guided,
}

impl From<ModeName> for BackpropMode {
    fn from(m: ModeName) -> Self {
        match m {
            ModeName::Standard => BackpropMode::Standard,
            ModeName::Deconv => BackpropMode::Deconv,
            ModeName::Guided => BackpropMode::Guided,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputName {
    SoftLabel,
    Logit,
}

impl From<OutputName> for MapOutput {
    fn from(o: OutputName) -> Self {
        match o {
            OutputName::SoftLabel => MapOutput::SoftLabel,
            OutputName::Logit => MapOutput::Logit,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct MapArgs {
    #[arg(long, value_enum, default_value_t = KindChoice::Both)]
    pub kind: KindChoice,
    /// ReLU rule for saliency gradients.
    #[arg(long, value_enum, default_value_t = ModeName::Guided)]
    pub mode: ModeName,
    /// Reduce saliency channels by largest magnitude instead of signed max.
    #[arg(long)]
    pub abs_max: bool,
    #[arg(long, value_enum, default_value_t = OutputName::SoftLabel)]
    pub map_output: OutputName,
    /// Grad-CAM layer (value index); defaults to the checkpoint's flagged layer.
    #[arg(long)]
    pub cam_layer: Option<usize>,
    /// Keep negative Grad-CAM values.
    #[arg(long)]
    pub no_cam_relu: bool,
    /// Overlay opacity.
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
}

impl MapArgs {
    pub fn options(&self) -> advsal_core::attention::MapOptions {
        use advsal_core::attention::{GradCamOptions, MapOptions, SaliencyOptions};
        MapOptions {
            saliency: SaliencyOptions {
                mode: self.mode.into(),
                reduction: if self.abs_max { ChannelReduction::AbsMax } else { ChannelReduction::SignedMax },
                output: self.map_output.into(),
            },
            gradcam: GradCamOptions {
                layer: self.cam_layer,
                relu: !self.no_cam_relu,
                output: self.map_output.into(),
            },
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct AttackArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub select: Selection,
    #[command(flatten)]
    pub output: OutputArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub attack: AttackOptions,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExplainBasis {
    Predicted,
    True,
}

#[derive(Debug, Clone, Args)]
pub struct ExplainArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub select: Selection,
    #[command(flatten)]
    pub output: OutputArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub maps: MapArgs,
    #[arg(long, value_enum, default_value_t = ExplainBasis::Predicted)]
    pub basis: ExplainBasis,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub select: Selection,
    #[command(flatten)]
    pub output: OutputArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub attack: AttackOptions,
    #[command(flatten)]
    pub maps: MapArgs,
    /// Which class each overlay pair is computed for.
    #[arg(long, value_enum, default_value_t = Basis::All)]
    pub basis: Basis,
    /// Fraction of cells in the top-k overlap.
    #[arg(long, default_value_t = advsal_core::analysis::DEFAULT_TOPK_FRACTION)]
    pub topk: f64,
}
