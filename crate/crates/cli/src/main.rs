//! `btc`: batch front end for threshold-based sparse classification.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use btc_core::{Error, ErrorKind};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "btc", version, about = "Sparse-representation classification by basic thresholding")]
struct Cli {
    /// Flat key=value file; flags given on the command line take precedence
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads (default: available parallelism)
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the threshold M from the training set
    EstimateBtc(EstimateBtcArgs),
    /// Estimate the RBF width and the threshold M from the training set
    EstimateKbtc(EstimateKbtcArgs),
    /// Classify a dense test set
    Classify(ClassifyArgs),
    /// Classify a hyperspectral scene, pixel-wise and with spatial smoothing
    ClassifyHsi(ClassifyHsiArgs),
    /// Classify with an ensemble of randomly projected classifiers
    Ensemble(EnsembleArgs),
    /// ROC curve of the rejection rule from two margin files
    Roc(RocArgs),
    /// Sparse recovery demo on a random Gaussian system
    SynthRecovery(SynthRecoveryArgs),
    /// Mutual coherence of the L2-normalized training dictionary
    Coherence(CoherenceArgs),
}

#[derive(Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct TrainSet {
    /// Training samples, one per CSV row
    #[arg(long)]
    pub train: PathBuf,
    /// One integer label per line
    #[arg(long)]
    pub train_labels: PathBuf,
}

#[derive(Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct TestSet {
    #[arg(long)]
    pub test: PathBuf,
    /// Enables the evaluation report
    #[arg(long)]
    pub test_labels: Option<PathBuf>,
}

#[derive(Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct Output {
    /// Directory for all artifacts
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassifierKind {
    Btc,
    Kbtc,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SmoothingKind {
    None,
    Box,
    Wls,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormalizationKind {
    Global,
    PerLayer,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    Sequential,
    Repeated,
}

#[derive(Args, Serialize)]
#[command(args_override_self = true)]
#[serde(rename_all = "kebab-case")]
pub struct EstimateBtcArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: TrainSet,
    #[arg(long, default_value_t = 0.01)]
    pub alpha: f64,
    #[arg(long, default_value_t = 2)]
    pub m_min: usize,
    /// Default: min(B − 1, N)
    #[arg(long)]
    pub m_max: Option<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    pub output: Output,
}

#[derive(Args, Serialize)]
#[command(args_override_self = true)]
#[serde(rename_all = "kebab-case")]
pub struct EstimateKbtcArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: TrainSet,
    #[arg(long, default_value_t = 1e-9)]
    pub alpha: f64,
    /// `2^lo..2^hi` or a comma-separated list
    #[arg(long, default_value = "2^-10..2^1")]
    pub gamma_grid: String,
    /// Scan every k-th threshold when averaging over M
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub output: Output,
}

#[derive(Args, Serialize)]
#[command(args_override_self = true)]
#[serde(rename_all = "kebab-case")]
pub struct ClassifyArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub train: TrainSet,
    #[command(flatten)]
    #[serde(flatten)]
    pub test: TestSet,
    #[arg(long, value_enum, default_value_t = ClassifierKind::Btc)]
    pub classifier: ClassifierKind,
    /// Threshold; estimated from the training set when omitted
    #[arg(long = "M")]
    #[serde(rename = "M")]
    pub m: Option<usize>,
    /// Default: 0.01 for btc, 1e-9 for kbtc
    #[arg(long)]
    pub alpha: Option<f64>,
    /// RBF width; estimated when omitted
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long, default_value = "2^-10..2^1")]
    pub gamma_grid: String,
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub output: Output,
}

#[derive(Args, Serialize)]
#[command(args_override_self = true)]
#[serde(rename_all = "kebab-case")]
pub struct ClassifyHsiArgs {
    /// ENVI-style header of the cube
    #[arg(long)]
    pub header: PathBuf,
    /// Raw payload of the cube
    #[arg(long)]
    pub raw: PathBuf,
    /// Ground-truth label map (CSV, 0 = unlabeled)
    #[arg(long)]
    pub gt: PathBuf,
    /// Training mask (CSV label map, 0 = not used for training)
    #[arg(long)]
    pub train_mask: Option<PathBuf>,
    /// Training blocks `row,col,height,width;...`
    #[arg(long)]
    pub train_blocks: Option<String>,
    /// Random training pixels per class
    #[arg(long)]
    pub train_per_class: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = ClassifierKind::Btc)]
    pub classifier: ClassifierKind,
    #[arg(long = "M")]
    #[serde(rename = "M")]
    pub m: Option<usize>,
    /// Default: 1e-10 for btc, 1e-9 for kbtc
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long, default_value = "2^-10..2^1")]
    pub gamma_grid: String,
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    #[arg(long, value_enum, default_value_t = SmoothingKind::Wls)]
    pub smoothing: SmoothingKind,
    #[arg(long, default_value_t = 5)]
    pub window: usize,
    #[arg(long, default_value_t = 0.4)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0.9)]
    pub wls_alpha: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub wls_eps: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub cg_tol: f64,
    #[arg(long, default_value_t = 2000)]
    pub cg_max_iter: usize,
    /// Raise each layer to 1 where the pixel-wise map chose another class
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub mask: bool,
    #[arg(long, value_enum, default_value_t = NormalizationKind::Global)]
    pub normalization: NormalizationKind,
    #[command(flatten)]
    #[serde(flatten)]
    pub output: Output,
}

#[derive(Args, Serialize)]
#[command(args_override_self = true)]
#[serde(rename_all = "kebab-case")]
pub struct EnsembleArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub train: TrainSet,
    #[command(flatten)]
    #[serde(flatten)]
    pub test: TestSet,
    #[arg(long, default_value_t = 10)]
    pub members: usize,
    /// Projected dimension B
    #[arg(long)]
    pub dim: usize,
    #[arg(long, default_value_t = 3)]
    pub sparsity: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = ScheduleKind::Sequential)]
    pub schedule: ScheduleKind,
    #[arg(long = "M")]
    #[serde(rename = "M")]
    pub m: usize,
    #[arg(long, default_value_t = 0.01)]
    pub alpha: f64,
    /// Rejection threshold on the margin; 0 accepts everything
    #[arg(long, default_value_t = 0.0)]
    pub tau: f64,
    #[command(flatten)]
    #[serde(flatten)]
    pub output: Output,
}

#[derive(Args, Serialize)]
#[command(args_override_self = true)]
#[serde(rename_all = "kebab-case")]
pub struct RocArgs {
    /// Margins of samples from enrolled classes, one per line
    #[arg(long)]
    pub valid: PathBuf,
    /// Margins of samples from unknown classes, one per line
    #[arg(long)]
    pub invalid: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub output: Output,
}

#[derive(Args, Serialize)]
#[command(args_override_self = true)]
#[serde(rename_all = "kebab-case")]
pub struct SynthRecoveryArgs {
    #[arg(long, default_value_t = 512)]
    pub n: usize,
    #[arg(long, default_value_t = 170)]
    pub b: usize,
    #[arg(long, default_value_t = 15)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long = "M", default_value_t = 120)]
    #[serde(rename = "M")]
    pub m: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub alpha: f64,
    #[command(flatten)]
    #[serde(flatten)]
    pub output: Output,
}

#[derive(Args, Serialize)]
#[command(args_override_self = true)]
#[serde(rename_all = "kebab-case")]
pub struct CoherenceArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: TrainSet,
}

fn kind_name(kind: ErrorKind) -> (&'static str, u8) {
    match kind {
        ErrorKind::Input => ("input", 2),
        ErrorKind::Io => ("io", 3),
        ErrorKind::Numerical => ("numerical", 4),
    }
}

fn fail(err: &Error) -> ExitCode {
    let (name, code) = kind_name(err.kind());
    let msg = err.to_string().replace('\n', " ");
    eprintln!("btc: {name} error: {msg}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let args = match config::expand_args(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => return fail(&e),
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let text = e.to_string();
            let line = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("btc: input error: {}", line.trim_start_matches("error: ").trim());
            return ExitCode::from(2);
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("btc: input error: thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match &cli.command {
        Command::EstimateBtc(a) => commands::estimate_btc(a),
        Command::EstimateKbtc(a) => commands::estimate_kbtc(a),
        Command::Classify(a) => commands::classify(a),
        Command::ClassifyHsi(a) => commands::classify_hsi(a),
        Command::Ensemble(a) => commands::ensemble(a),
        Command::Roc(a) => commands::roc(a),
        Command::SynthRecovery(a) => commands::synth_recovery(a),
        Command::Coherence(a) => commands::coherence(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}
