use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser, Serialize)]
#[command(
    name = "qstrat",
    version,
    about = "Q-valued Dirichlet minimizers and quantitative stratification"
)]
pub struct Cli {
    /// Worker threads (QSTRAT_THREADS is used when absent).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// JSON object of default flag values, keyed by long flag name.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case", tag = "command")]
pub enum Command {
    /// G distance between two Q-points given as "x,y;x,y;...".
    Metric(MetricArgs),
    /// Sample a branch field Re/Im(c z^(p/q)) on a square grid.
    MakeField(MakeFieldArgs),
    /// Minimize the discrete Dirichlet energy with fixed boundary nodes.
    Minimize(MinimizeArgs),
    /// Radial profile of D, H and the frequency I as CSV.
    Frequency(FrequencyArgs),
    /// Distance of the blowup trace to the homogeneous class of spine dim >= k.
    Dk(DkArgs),
    /// Singular strata, bad scales and the iterative cover with audits.
    Stratify(StratifyArgs),
    /// Tubular volumes and the Minkowski-dimension fit of a point cloud.
    Minkowski(MinkowskiArgs),
    /// Search for counterexamples to the pinching and confinement hypotheses.
    Verify(VerifyArgs),
    /// Dimension of the maximal-multiplicity set against the codimension bound.
    TheoremA(TheoremAArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct MetricArgs {
    #[arg(long, allow_hyphen_values = true)]
    pub a: String,
    #[arg(long, allow_hyphen_values = true)]
    pub b: String,
    /// Decimal places printed.
    #[arg(long, default_value_t = 7)]
    pub digits: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct GridArgs {
    /// Nodes per axis.
    #[arg(long, default_value_t = 129)]
    pub nodes: usize,
    #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
    pub lo: f64,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    pub hi: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct MakeFieldArgs {
    #[arg(long, default_value_t = 2)]
    pub q: usize,
    /// Winding; negative values give the conjugate orientation.
    #[arg(long, default_value_t = 1, allow_hyphen_values = true)]
    pub p: i64,
    /// Complex coefficient "re,im".
    #[arg(long, default_value = "1,0", allow_hyphen_values = true)]
    pub coeff: String,
    #[command(flatten)]
    pub grid: GridArgs,
    /// Fix only nodes outside the centered ball of this radius.
    #[arg(long)]
    pub ball: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitArg {
    Sheets,
    Cone,
    Best,
}

#[derive(Debug, Args, Serialize)]
pub struct MinimizeArgs {
    #[arg(long)]
    pub boundary: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100_000)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 5)]
    pub rematch_every: usize,
    /// Over-relaxation factor; defaults to the grid-optimal value.
    #[arg(long)]
    pub relaxation: Option<f64>,
    #[arg(long, value_enum, default_value_t = InitArg::Best)]
    pub init: InitArg,
    /// Convergence log path; defaults to `<out>.log.json`.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct FrequencyArgs {
    #[arg(long)]
    pub field: PathBuf,
    /// Comma-separated coordinates.
    #[arg(long, allow_hyphen_values = true)]
    pub center: String,
    /// Geometric radii "lo:hi:count".
    #[arg(long)]
    pub radii: String,
    /// CSV path; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// SVG plot of I against the radius.
    #[arg(long)]
    pub plot: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct SearchArgs {
    /// Sphere samples for blowup traces.
    #[arg(long, default_value_t = 256)]
    pub samples: usize,
    #[arg(long, default_value_t = 3.0)]
    pub alpha_cap: f64,
    #[arg(long, default_value_t = 4)]
    pub restarts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct DkArgs {
    #[arg(long)]
    pub field: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    pub center: String,
    #[arg(long)]
    pub radius: f64,
    #[arg(long)]
    pub k: usize,
    #[command(flatten)]
    pub search: SearchArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum ModeArg {
    Practical,
    Proof,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum CalibrationArg {
    /// Built-in constants (practical mode only).
    Fallback,
    /// `--eta1`, `--lambda1` and `--eta2` as given.
    User,
    /// Largest constants without counterexamples on a sweep, halved.
    Empirical,
}

#[derive(Debug, Args, Serialize)]
pub struct StratifyArgs {
    #[arg(long)]
    pub field: PathBuf,
    #[arg(long)]
    pub k: usize,
    #[arg(long)]
    pub delta: f64,
    #[arg(long)]
    pub r0: f64,
    #[arg(long, default_value_t = 0.5)]
    pub kappa0: f64,
    #[arg(long, value_enum, default_value_t = ModeArg::Practical)]
    pub mode: ModeArg,
    /// Scale ratio in practical mode.
    #[arg(long, default_value_t = 0.1)]
    pub tau: f64,
    #[arg(long, value_enum, default_value_t = CalibrationArg::Fallback)]
    pub calibration: CalibrationArg,
    #[arg(long)]
    pub eta1: Option<f64>,
    #[arg(long)]
    pub lambda1: Option<f64>,
    /// Ratio gamma_(i-1) / gamma_i of the gamma chain.
    #[arg(long)]
    pub eta2: Option<f64>,
    /// Covering depth p; defaults to p0.
    #[arg(long)]
    pub depth: Option<usize>,
    /// Smallest membership scale; defaults to four grid cells.
    #[arg(long)]
    pub r: Option<f64>,
    #[arg(long, default_value_t = 2.0)]
    pub scale_ratio: f64,
    /// Threshold on |recentered u| for maximal multiplicity; defaults to 2 sqrt(h).
    #[arg(long)]
    pub zero_tol: Option<f64>,
    #[command(flatten)]
    pub search: SearchArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct MinkowskiArgs {
    /// CSV file, one point per line.
    #[arg(long)]
    pub points: PathBuf,
    /// Geometric radii "lo:hi:count"; defaults to window/8 down to 8 cells.
    #[arg(long)]
    pub radii: Option<String>,
    /// Cell size; defaults to an eighth of the smallest radius.
    #[arg(long)]
    pub cell: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
    /// SVG plot of the log-log fit.
    #[arg(long)]
    pub plot: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct VerifyArgs {
    #[arg(long)]
    pub field: PathBuf,
    /// Largest scale of the sweep; sweep scales are r0, r0/2, r0/4, r0/8.
    #[arg(long)]
    pub r0: f64,
    #[arg(long, default_value_t = 0.5)]
    pub lambda1: f64,
    #[arg(long, default_value_t = 0.1)]
    pub tau: f64,
    #[arg(long, default_value_t = 0.1)]
    pub eps1: f64,
    #[arg(long, default_value_t = 0.5)]
    pub eps2: f64,
    /// Given together with `--eta2`, skips the empirical calibration.
    #[arg(long)]
    pub eta1: Option<f64>,
    #[arg(long)]
    pub eta2: Option<f64>,
    #[arg(long)]
    pub zero_tol: Option<f64>,
    #[command(flatten)]
    pub search: SearchArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Two sheets, `+-sqrt(z)`.
    Branch2,
    /// Three sheets, `z^(2/3)`.
    Branch3,
}

#[derive(Debug, Args, Serialize)]
pub struct TheoremAArgs {
    #[arg(long, value_enum, conflicts_with = "field")]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub field: Option<PathBuf>,
    /// Minimize with the preset as boundary data on the unit disk.
    #[arg(long)]
    pub minimize: bool,
    #[arg(long, default_value_t = 0.5)]
    pub kappa0: f64,
    #[arg(long, default_value_t = 129)]
    pub nodes: usize,
    /// Threshold on |recentered u|; defaults to 2 sqrt(h).
    #[arg(long)]
    pub tol: Option<f64>,
    /// Volume cell size; defaults to the window side / 1024.
    #[arg(long)]
    pub cell: Option<f64>,
    /// Output directory for the report, plot and manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
