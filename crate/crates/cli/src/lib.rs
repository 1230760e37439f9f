//! `infarctkit`: scripted access to phantoms, ROI extraction, 5-SD
//! thresholding, perturbation, evaluation, statistics and the rating
//! service.
//!
//! Results go to stdout (JSON) or to the files named by flags (CSV/JSON);
//! diagnostics go to stderr. Exit codes: 0 success, 1 invalid input or
//! usage, 2 I/O failure.

mod commands;

use clap::{Args, Parser, Subcommand};
use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

pub use commands::{eval_class_set, read_manifest, EvalRow, ManifestRow, EVAL_CLASSES};

#[derive(Debug)]
pub enum CliError {
    Invalid(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => 1,
            CliError::Io(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Invalid(m) => write!(f, "error: {m}"),
            CliError::Io(m) => write!(f, "I/O error: {m}"),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<infarct_core::volume::VolumeError> for CliError {
    fn from(e: infarct_core::volume::VolumeError) -> Self {
        use infarct_core::volume::VolumeError;
        match e {
            VolumeError::Io(_) | VolumeError::MissingFile(_) => CliError::Io(e.to_string()),
            other => CliError::Invalid(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "infarctkit",
    version,
    about = "LGE infarct segmentation evaluation toolkit"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic LV phantom volume; prints its ground truth as JSON.
    Phantom(PhantomArgs),
    /// Crop every slice to a window centred on the LV; prints the placement.
    Roi(RoiArgs),
    /// Threshold myocardium at remote mean + k·SD; prints the report.
    Seg5sd(Seg5sdArgs),
    /// Corrupt a label stack with seeded perturbations; prints the log.
    Perturb(PerturbArgs),
    /// Compare predictions with ground truth for every manifest row.
    Eval(EvalArgs),
    /// Agreement statistics for two columns of a CSV file.
    Stats(StatsArgs),
    /// Run the blinded rating service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    /// Output volume directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: u64,
    /// nx,ny,nz
    #[arg(long, default_value = "64,64,8")]
    pub dims: String,
    /// dx,dy,slice_thickness,interslice_gap in mm.
    #[arg(long, default_value = "2.2,1.6,8,2")]
    pub spacing: String,
    #[arg(long, default_value_t = 10.0)]
    pub inner_radius: f64,
    #[arg(long, default_value_t = 16.0)]
    pub outer_radius: f64,
    /// Scar wedge start, degrees.
    #[arg(long, default_value_t = 0.0)]
    pub scar_start: f64,
    /// Scar wedge end, degrees.
    #[arg(long, default_value_t = 60.0)]
    pub scar_end: f64,
    /// Add an MVO core in the middle third of the wedge.
    #[arg(long)]
    pub mvo: bool,
    #[arg(long, default_value_t = 0.0)]
    pub noise_sd: f64,
    /// Phantom description as JSON; replaces every shape flag above.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RoiArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// width,height
    #[arg(long, default_value = "128,128")]
    pub size: String,
    /// Classes that locate the LV.
    #[arg(long, default_value = "lv")]
    pub lv_classes: String,
    /// Scale the cropped image stack to zero mean, unit SD.
    #[arg(long)]
    pub normalize: bool,
}

#[derive(Debug, Args)]
pub struct Seg5sdArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Slice holding the remote ROI; defaults to the middle slice.
    #[arg(long)]
    pub roi_slice: Option<usize>,
    /// x0,y0,x1,y1 half-open rectangle; defaults to every remote pixel of the slice.
    #[arg(long)]
    pub roi_rect: Option<String>,
    #[arg(long, default_value_t = 5.0)]
    pub k: f64,
    #[arg(long, default_value_t = 0.0)]
    pub sd_floor: f64,
    #[arg(long, default_value_t = 1)]
    pub min_component: usize,
    /// Per-slice area CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Relabelled volume directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PerturbArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: u64,
    /// Perturbation settings as JSON; missing fields take defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Write the log here instead of stdout.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// CSV with columns patient_id,pred_path,gt_path.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Metrics CSV, one row per patient and class.
    #[arg(long)]
    pub out: PathBuf,
    /// Summary JSON; printed to stdout when absent.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Two column names: x,y.
    #[arg(long)]
    pub pair: String,
    /// Keep only rows whose `class` column equals this.
    #[arg(long)]
    pub class: Option<String>,
    /// exact, normal or auto.
    #[arg(long, default_value = "auto")]
    pub wilcoxon: String,
    /// wilcox (drop zeros) or pratt.
    #[arg(long, default_value = "wilcox")]
    pub zero_method: String,
    #[arg(long, default_value_t = 1.96)]
    pub loa_multiplier: f64,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    /// CSV of x, y, mean and difference per pair for plotting.
    #[arg(long)]
    pub points: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub data_dir: PathBuf,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long)]
    pub admin_token: String,
}

/// Parses `argv` (including the program name) and runs the command,
/// writing results to `out` and diagnostics to `err`.
pub fn run_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    0
                }
                _ => {
                    let _ = write!(err, "{text}");
                    1
                }
            };
        }
    };
    match commands::dispatch(cli.command, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "{e}");
            e.exit_code()
        }
    }
}

pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(argv, &mut stdout.lock(), &mut stderr.lock())
}
