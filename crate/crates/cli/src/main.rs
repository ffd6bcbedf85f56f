mod commands;
mod output;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bwlab::transforms::TransformKind;

#[derive(Parser, Debug)]
#[command(name = "bwlab", version, about = "Batch whitening experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Stochastic normalization disturbance, single point or sweep.
    Snd(SndArgs),
    /// Normalized coordinates of one probe under many mini-batches.
    Scatter(ScatterArgs),
    /// Train the MLP and log training error per epoch.
    Train(TrainArgs),
    /// Accuracy difference between the two estimation objects.
    Estimate(EstimateArgs),
    /// Element-wise variability of the per-step Σ and W of one layer.
    Diversity(DiversityArgs),
    /// Finite-difference check of every backward pass.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Base seed; falls back to BWLAB_SEED, then 0.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads for independent sweep cells.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Args, Debug, Clone)]
pub struct WhiteningArgs {
    /// Group size (default: whiten all dimensions jointly).
    #[arg(long)]
    pub group: Option<usize>,
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
    #[arg(long = "itn-t", default_value_t = 5)]
    pub itn_t: usize,
}

#[derive(Args, Debug)]
pub struct SndArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub whitening: WhiteningArgs,
    #[arg(long = "transform", value_delimiter = ',', default_value = "bn,pca,zca,cd")]
    pub transforms: Vec<TransformKind>,
    #[arg(long, default_value_t = 128)]
    pub dim: usize,
    #[arg(long, default_value_t = 1024)]
    pub batch: usize,
    #[arg(long)]
    pub sweep: Option<bwlab::stochasticity::SweepAxis>,
    #[arg(long, value_delimiter = ',')]
    pub values: Vec<usize>,
    /// Mini-batches per probe.
    #[arg(long = "s", default_value_t = 200)]
    pub num_batches: usize,
    #[arg(long, default_value_t = 20)]
    pub points: usize,
    /// Include the probe in its own batch statistics.
    #[arg(long)]
    pub probe_in_batch: bool,
    /// Data covariance: `mixed` (A·Aᵀ/d + I/2, fixed A) or `identity`.
    #[arg(long, default_value = "mixed")]
    pub covariance: String,
}

#[derive(Args, Debug)]
pub struct ScatterArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub whitening: WhiteningArgs,
    #[arg(long = "transform", value_delimiter = ',', default_value = "bn,pca,zca,cd")]
    pub transforms: Vec<TransformKind>,
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    /// Two 1-based coordinates to report.
    #[arg(long, value_delimiter = ',', default_value = "6,16")]
    pub axes: Vec<usize>,
    #[arg(long, default_value_t = 1000)]
    pub population: usize,
    #[arg(long, default_value = "mixed")]
    pub covariance: String,
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// `mnist` or `gaussian`.
    #[arg(long, default_value = "mnist")]
    pub dataset: String,
    /// Directory with the four MNIST IDX files (default: BWLAB_MNIST_DIR, then data/mnist).
    #[arg(long)]
    pub mnist_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    pub gaussian_dim: usize,
    #[arg(long, default_value_t = 60000)]
    pub gaussian_n: usize,
    #[arg(long, default_value_t = 10000)]
    pub gaussian_test_n: usize,
    /// Use only the first N training samples.
    #[arg(long)]
    pub train_limit: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    /// `none` or a transform name (default: bn for train, zca for diversity).
    #[arg(long)]
    pub norm: Option<String>,
    #[command(flatten)]
    pub whitening: WhiteningArgs,
    /// `sigma` or `w`.
    #[arg(long, default_value = "sigma")]
    pub estimation: String,
    /// `scale-shift` or `coloring`.
    #[arg(long, default_value = "scale-shift")]
    pub recovery: String,
    #[arg(long, default_value_t = 0.1)]
    pub momentum: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lr: f64,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1024)]
    pub batch: usize,
    #[arg(long, default_value_t = 256)]
    pub width: usize,
    #[arg(long, default_value_t = 4)]
    pub depth: usize,
    /// Clamp tiny eigengaps in the PCA/ZCA backward instead of failing.
    #[arg(long)]
    pub clamp_eigengap: bool,
    #[arg(long, default_value_t = 1000)]
    pub eval_batch: usize,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Args, Debug)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub whitening: WhiteningArgs,
    #[arg(long, value_delimiter = ',', default_value = "512")]
    pub widths: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "32")]
    pub batches: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1,0.5")]
    pub lrs: Vec<f64>,
    #[arg(long = "transform", value_delimiter = ',', default_value = "zca,cd")]
    pub transforms: Vec<TransformKind>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    pub seeds: Vec<u64>,
    #[arg(long, default_value_t = 1)]
    pub epochs: usize,
    #[arg(long, default_value_t = 4)]
    pub depth: usize,
    #[arg(long)]
    pub clamp_eigengap: bool,
    #[arg(long, default_value_t = 1000)]
    pub eval_batch: usize,
}

#[derive(Args, Debug)]
pub struct DiversityArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// 1-based hidden layer to record.
    #[arg(long, default_value_t = 1)]
    pub layer: usize,
    /// Also store every k-th Σ_t and W_t as binary sequences (0: none).
    #[arg(long, default_value_t = 0)]
    pub keep_every: usize,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long = "transform", value_delimiter = ',', default_value = "bn,pca,zca,cd,itn")]
    pub transforms: Vec<TransformKind>,
    #[arg(long, default_value_t = 50)]
    pub cases: usize,
    #[arg(long, value_delimiter = ',', default_value = "2,4,8,16")]
    pub dims: Vec<usize>,
    /// Skip the end-to-end layer checks.
    #[arg(long)]
    pub no_layer: bool,
    /// Deliberate defect for exercising the failure path: `none` or `zca-sign-flip`.
    #[arg(long, default_value = "none")]
    pub inject_fault: bwlab::gradcheck::Fault,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("bwlab: {}", failure.message());
            ExitCode::from(failure.code())
        }
    }
}
