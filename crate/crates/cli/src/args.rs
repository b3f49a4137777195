use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "agc", version, about = "Train and evaluate attention enhanced graph convolutional LSTMs on skeleton sequences")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// TOML configuration; defaults apply to every missing key.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides `variant`: agc-lstm, gc-lstm, gc-lstm+th, lstm or lstm+th.
    #[arg(long, global = true)]
    pub variant: Option<String>,
    /// Overrides `stream`: joint, part or hybrid.
    #[arg(long, global = true)]
    pub stream: Option<String>,
    /// Run directory; created if missing.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write metrics, evaluation results and checkpoints.
    Train,
    /// Evaluate checkpoints on a dataset.
    Eval(EvalArgs),
    /// Compare back-propagated gradients with central differences.
    Gradcheck(GradcheckArgs),
    /// Write the synthetic train and test splits as dataset files.
    GenSynth,
    /// Write per-layer attention matrices of one sample.
    ExportAttention(AttentionArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ModelSource {
    /// Joint-stream (or single-stream) checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Part-stream checkpoint, fused with the first one.
    #[arg(long)]
    pub part_checkpoint: Option<PathBuf>,
    /// Dataset file; defaults to the test split of the configuration.
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub source: ModelSource,
    /// Sample whose attention matrices are written.
    #[arg(long, default_value_t = 0)]
    pub sample: usize,
}

#[derive(Debug, Clone, Args)]
pub struct AttentionArgs {
    #[command(flatten)]
    pub source: ModelSource,
    #[arg(long, default_value_t = 0)]
    pub sample: usize,
}

#[derive(Debug, Clone, Args)]
pub struct GradcheckArgs {
    /// Random entries probed per parameter tensor.
    #[arg(long, default_value_t = 3)]
    pub probes: usize,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    /// Largest accepted relative error.
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    /// Set every parameter to zero before checking.
    #[arg(long)]
    pub zero_params: bool,
    /// Test fixture: add 1.0 to the analytic gradient of this parameter.
    #[arg(long, hide = true)]
    pub corrupt_gradient: Option<String>,
}
