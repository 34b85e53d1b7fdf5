use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "driftwatch",
    version,
    about = "Distribution-shift monitoring: window sizing, calibration, runtime scoring"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Select a trustworthy window size via bootstrapped power analysis.
    ///
    /// Exits 0 when a size reaches full power, 2 when none does.
    Power(PowerArgs),
    /// Fit PCA and per-kind uncertainty estimators, then persist the model.
    Calibrate(CalibrateArgs),
    /// Replay a recorded feature stream through the monitor, emitting one
    /// JSON report line per (window, kind).
    Monitor(MonitorArgs),
    /// Score a report stream against per-window truth.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct PowerArgs {
    /// Training (in-scope) feature CSV; also serves as the reference set.
    pub train_csv: PathBuf,
    /// Out-of-scope feature CSV.
    pub ood_csv: PathBuf,
    /// Distance kind: ks, ad or es.
    #[arg(long, default_value = "ks")]
    pub kind: String,
    /// Confidence level.
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    /// Bootstrap trials per candidate size.
    #[arg(long, default_value_t = 20)]
    pub trials: usize,
    /// Candidate sizes: "start:end:step" or a comma list.
    #[arg(long, default_value = "10:200:10")]
    pub sizes: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write the power curve as JSON here instead of stdout.
    #[arg(long)]
    pub json: Option<PathBuf>,
    /// Also write (size, power) rows as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Calibration feature CSV; must carry a `correct` column.
    pub cal_csv: PathBuf,
    /// Reference (training) feature CSV.
    pub ref_csv: PathBuf,
    /// Output model path.
    #[arg(long)]
    pub out: PathBuf,
    /// Rows per calibration batch.
    #[arg(long, default_value_t = 50)]
    pub n: usize,
    /// Batch count; batches i = 0..=m mix correct ratio i/m.
    #[arg(long, default_value_t = 20)]
    pub m: usize,
    /// Distance kinds to calibrate, comma separated.
    #[arg(long, default_value = "ks,cvm,ad,ws,dts,es")]
    pub kinds: String,
    /// Per-kind form overrides, e.g. "es=sigmoid3,ks=poly2".
    #[arg(long)]
    pub forms: Option<String>,
    /// PCA explained-variance target.
    #[arg(long, default_value_t = 0.85)]
    pub target_variance: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Monitor window size stored in the model; defaults to --n.
    #[arg(long)]
    pub window: Option<usize>,
    /// Z-score features before PCA instead of centering only.
    #[arg(long)]
    pub standardize: bool,
    /// Store the reference by path + digest instead of embedding it.
    #[arg(long)]
    pub ref_by_path: bool,
    /// Directory for per-kind calibration point CSVs.
    #[arg(long)]
    pub points_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MonitorArgs {
    /// Recorded operational feature CSV (raw features).
    pub stream_csv: PathBuf,
    /// Model produced by `calibrate`.
    pub model: PathBuf,
    /// Uncertainty threshold; a window is rejected strictly above it.
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// Samples between reports; defaults to the window size (tumbling).
    #[arg(long)]
    pub stride: Option<usize>,
    /// Decision aggregation across kinds: per-kind, max or mean.
    #[arg(long, default_value = "per-kind")]
    pub aggregate: String,
    /// Restrict to a subset of the model's calibrated kinds.
    #[arg(long)]
    pub kinds: Option<String>,
    /// Write report lines here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-sample truth CSV (a `correct` column aligned with the stream);
    /// enables the trailing confusion summary line.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Write per-window truth (window_id, true_inaccuracy) here.
    #[arg(long)]
    pub truth_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// JSON-lines report stream from `monitor`.
    pub reports: PathBuf,
    /// Per-window truth CSV (window_id, true_inaccuracy).
    pub truth: PathBuf,
    /// Inaccuracy cut used for false-reject / miss accounting.
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// Also emit the threshold / accuracy cut-off sweep.
    #[arg(long)]
    pub sweep: bool,
    /// Sweep thresholds: "start:end:step" or a comma list.
    #[arg(long, default_value = "0:1:0.05")]
    pub thresholds: String,
    /// Aggregation rule used when re-deciding during the sweep.
    #[arg(long, default_value = "per-kind")]
    pub aggregate: String,
    /// Write the per-kind confusion table here instead of stdout.
    #[arg(long)]
    pub confusion_out: Option<PathBuf>,
    /// Write the sweep table here instead of stdout.
    #[arg(long)]
    pub sweep_out: Option<PathBuf>,
}
