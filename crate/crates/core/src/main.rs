use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ped_eval::boundary::{ThresholdGrid, Tolerance};
use ped_eval::error::{Error, Result};
use ped_eval::eval::{evaluate_dataset, write_pr_dump, EvalConfig};
use ped_eval::gt_convert::{convert_dataset, ConvertOptions, DEFAULT_RADIUS};
use ped_eval::io::{self, RangePolicy};
use ped_eval::loss::{reweighted_edge_loss, BalanceMode, DEFAULT_CLIP_EPS};
use ped_eval::manifest::{PredFormat, DATASET_MANIFEST_NAME, PREDICTION_MANIFEST_NAME};
use ped_eval::matching::{DEFAULT_IOU_MIN, DEFAULT_TOP_T};
use ped_eval::metric::InstanceEdgeMode;
use ped_eval::perturb::{perturb_dataset, PerturbSpec};
use ped_eval::raster::CategorySet;
use ped_eval::synth::write_synth_dataset;

#[derive(Parser)]
#[command(name = "ped", version, about = "Panoptic edge detection evaluation")]
struct Cli {
    /// Worker threads for per-image work (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert segmentation rasters into boundary ground truth.
    ConvertGt(ConvertArgs),
    /// Score predictions against converted ground truth.
    Eval(EvalArgs),
    /// Write degraded copies of the ground truth as predictions.
    Perturb(PerturbArgs),
    /// Class-balanced edge loss of one prediction map.
    Loss(LossArgs),
    /// Render a JSON report as CSV.
    Report(ReportArgs),
    /// Write a seeded synthetic segmentation dataset.
    Synth(SynthArgs),
}

#[derive(Args)]
struct ConvertArgs {
    /// Directory with <id>_label.png, <id>_instance.png and <id>_instance.json.
    #[arg(long)]
    seg_root: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    categories: PathBuf,
    #[arg(long, default_value_t = DEFAULT_RADIUS)]
    radius: usize,
    /// Keep only these category ids; other labels become ignore.
    #[arg(long, value_delimiter = ',')]
    only: Option<Vec<u16>>,
}

#[derive(Args)]
struct EvalArgs {
    /// Converted dataset directory or its manifest.
    #[arg(long)]
    gt: PathBuf,
    /// Prediction directory or its manifest.
    #[arg(long)]
    pred: PathBuf,
    /// JSON report path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Fraction of the image diagonal ("0.0035") or pixels ("2px").
    #[arg(long, default_value = "0.0035")]
    tolerance: String,
    /// Number of evenly spaced thresholds.
    #[arg(long, default_value_t = 99)]
    thresholds: usize,
    #[arg(long, default_value_t = DEFAULT_IOU_MIN)]
    iou_min: f64,
    #[arg(long, default_value_t = DEFAULT_TOP_T)]
    top_t: usize,
    #[arg(long, default_value_t = 0.0)]
    min_score: f64,
    #[arg(long, value_enum, default_value_t = EdgeMode::DatasetOds)]
    instance_edge_mode: EdgeMode,
    /// Reject probabilities outside [0, 1] instead of clamping them.
    #[arg(long)]
    strict: bool,
    /// Predictions are 8-bit PNGs (value / 255).
    #[arg(long)]
    quantized: bool,
    /// Write per-category precision/recall CSVs here.
    #[arg(long)]
    pr_dump: Option<PathBuf>,
    /// Score only these category ids.
    #[arg(long, value_delimiter = ',')]
    only: Option<Vec<u16>>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum EdgeMode {
    DatasetOds,
    PerPairMean,
}

#[derive(Args)]
struct PerturbArgs {
    /// Converted dataset directory or its manifest.
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// JSON file with {"seed": .., "ops": [..]}; no file means exact copies.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Overrides the seed of the spec.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct LossArgs {
    /// Prediction map (.pedp).
    #[arg(long)]
    pred: PathBuf,
    /// Binary label map (.pedp, values >= 0.5 are edges).
    #[arg(long)]
    gt: PathBuf,
    #[arg(long, default_value_t = DEFAULT_CLIP_EPS)]
    clip_eps: f64,
    /// Balance each channel separately.
    #[arg(long)]
    per_channel: bool,
    #[arg(long)]
    strict: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// JSON report written by `eval`.
    #[arg(long = "in")]
    input: PathBuf,
    /// CSV output; stdout when absent.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    count: usize,
    #[arg(long, default_value_t = 256)]
    width: usize,
    #[arg(long, default_value_t = 256)]
    height: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Failure split into usage problems (exit 1) and everything else.
enum Failure {
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

fn usage<T>(r: Result<T>) -> std::result::Result<T, Failure> {
    r.map_err(|e| Failure::Usage(e.to_string()))
}

fn manifest_path(p: &Path, name: &str) -> PathBuf {
    if p.is_dir() {
        p.join(name)
    } else {
        p.to_path_buf()
    }
}

fn read_categories(path: &Path) -> Result<CategorySet> {
    let bytes = io::read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn run(cmd: Command) -> std::result::Result<(), Failure> {
    match cmd {
        Command::ConvertGt(a) => {
            let cats = read_categories(&a.categories)?;
            let opts = ConvertOptions {
                radius: a.radius,
                only: a.only,
            };
            if opts.radius == 0 {
                return Err(Failure::Usage("radius must be at least 1".into()));
            }
            let m = convert_dataset(&a.seg_root, &a.out, &cats, &opts)?;
            eprintln!("converted {} images", m.images.len());
            if !m.errors.is_empty() {
                for e in &m.errors {
                    eprintln!("error: {}: {}", e.id, e.message);
                }
                return Err(Failure::Run(Error::format(
                    &a.seg_root,
                    format!("{} images failed", m.errors.len()),
                )));
            }
        }
        Command::Eval(a) => {
            let cfg = EvalConfig {
                tolerance: usage(a.tolerance.parse::<Tolerance>())?,
                grid: usage(ThresholdGrid::uniform(a.thresholds))?,
                iou_min: a.iou_min,
                top_t: a.top_t,
                min_score: a.min_score,
                instance_edge_mode: match a.instance_edge_mode {
                    EdgeMode::DatasetOds => InstanceEdgeMode::DatasetOds,
                    EdgeMode::PerPairMean => InstanceEdgeMode::PerPairMean,
                },
                range: if a.strict {
                    RangePolicy::Strict
                } else {
                    RangePolicy::Clamp
                },
                format: if a.quantized {
                    PredFormat::Quantized
                } else {
                    PredFormat::Float
                },
                only: a.only,
            };
            usage(cfg.validate())?;
            let eval = evaluate_dataset(
                &manifest_path(&a.gt, DATASET_MANIFEST_NAME),
                &manifest_path(&a.pred, PREDICTION_MANIFEST_NAME),
                &cfg,
            )?;
            io::write_report(&eval.report, &a.out, a.csv.as_deref())?;
            if let Some(dir) = &a.pr_dump {
                write_pr_dump(&eval, dir)?;
            }
        }
        Command::Perturb(a) => {
            let mut spec: PerturbSpec = match &a.spec {
                Some(p) => {
                    let bytes = io::read_bytes(p)?;
                    serde_json::from_slice(&bytes).map_err(|source| Error::Json {
                        path: p.clone(),
                        source,
                    })?
                }
                None => PerturbSpec::default(),
            };
            if let Some(s) = a.seed {
                spec.seed = s;
            }
            usage(spec.validate())?;
            let m = perturb_dataset(&manifest_path(&a.gt, DATASET_MANIFEST_NAME), &a.out, &spec)?;
            eprintln!("wrote predictions for {} images", m.images.len());
        }
        Command::Loss(a) => {
            let policy = if a.strict {
                RangePolicy::Strict
            } else {
                RangePolicy::Clamp
            };
            let pred = io::read_prob_map(&a.pred, policy)?;
            let gt = io::read_prob_map(&a.gt, RangePolicy::Strict)?;
            if (pred.channels(), pred.width(), pred.height())
                != (gt.channels(), gt.width(), gt.height())
            {
                return Err(Failure::Run(Error::Shape(
                    "prediction and label maps differ in shape".into(),
                )));
            }
            let p: Vec<f64> = pred.values().iter().map(|&v| f64::from(v)).collect();
            let y: Vec<bool> = gt.values().iter().map(|&v| v >= 0.5).collect();
            let mode = if a.per_channel {
                BalanceMode::PerChannel
            } else {
                BalanceMode::Joint
            };
            let l = match reweighted_edge_loss(&p, &y, pred.channels(), a.clip_eps, mode) {
                Err(e @ Error::Param(_)) => return Err(Failure::Usage(e.to_string())),
                r => r?,
            };
            let out = serde_json::json!({
                "eta": l.eta,
                "eta_bar": l.eta_bar,
                "value": l.value,
                "channel_factors": l.channel_factors,
            });
            println!("{}", serde_json::to_string_pretty(&out).expect("json"));
        }
        Command::Report(a) => {
            let report = io::read_report(&a.input)?;
            let csv = io::report_csv(&report);
            match &a.csv {
                Some(p) => io::write_atomic(p, csv.as_bytes())?,
                None => print!("{csv}"),
            }
        }
        Command::Synth(a) => {
            if a.width < 24 || a.height < 24 {
                return Err(Failure::Usage(
                    "synthetic scenes need at least 24x24 pixels".into(),
                ));
            }
            write_synth_dataset(&a.out, a.count, a.width, a.height, a.seed)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.jobs {
        if n == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(3);
        }
    }
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
