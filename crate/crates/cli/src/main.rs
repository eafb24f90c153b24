//! `shapesel`: file-based pipelines over shape databases and scenes.
//!
//! Exit status is 0 on success, 1 on a usage or configuration error and 2
//! when input data is missing, malformed or rejected.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Bad flags or configuration; everything else is a data error.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug, Parser)]
#[command(name = "shapesel", version, about = "Shape-selection scene reconstruction toolkit")]
pub struct Cli {
    /// JSON experiment configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the parametric toy meshes as OBJ files, one directory per class.
    ToyMeshes {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 6)]
        per_class: usize,
    },
    /// Cluster meshes (one subdirectory per class) into an exemplar database.
    BuildDb(BuildDbArgs),
    /// Generate collision-free random scenes from a database.
    GenScenes {
        #[arg(long)]
        db: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long)]
        objects: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Hard and soft selection labels for every object of a scene.
    Labels {
        /// Database the labels refer to.
        #[arg(long)]
        db: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        /// Database indexed by the scene (defaults to --db).
        #[arg(long)]
        gt_db: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Ground-truth poses with each shape swapped for its nearest exemplar.
    Oracle {
        /// Database the oracle scene draws from.
        #[arg(long)]
        db: PathBuf,
        /// Database indexed by the ground-truth scene.
        #[arg(long)]
        gt_db: PathBuf,
        /// Ground-truth scene file or directory.
        #[arg(long)]
        gt: PathBuf,
        /// Output file, or directory when --gt is one.
        #[arg(long)]
        out: PathBuf,
    },
    /// Recover poses by fitting a scene to ground-truth point clouds.
    FitPose(FitArgs),
    /// Push interpenetrating objects apart.
    Resolve(ResolveArgs),
    /// Score predicted scenes against ground truth.
    Evaluate(EvalArgs),
    /// Convert a scene to meshes, points or an occupancy grid.
    Export {
        #[arg(long)]
        db: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, value_enum)]
        format: ExportFormat,
        #[arg(long)]
        out: PathBuf,
        /// Occupancy resolution along the longest side (sdfg only).
        #[arg(long, default_value_t = 64)]
        res: usize,
    },
}

#[derive(Debug, Args)]
pub struct BuildDbArgs {
    #[arg(long)]
    pub meshes: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub res: Option<usize>,
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON object mapping `class/name` to a row-major rotation applied before canonicalization.
    #[arg(long)]
    pub pre_rotation: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OptimFlags {
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub warmup: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated parameter groups to hold fixed: rot, trans, scale.
    #[arg(long)]
    pub freeze: Option<String>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub db: PathBuf,
    /// Scene whose posed exemplar point clouds are the targets.
    #[arg(long)]
    pub gt: PathBuf,
    /// Initial scene; when absent the ground truth is perturbed.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long, default_value_t = 10.0)]
    pub rot_deg: f64,
    #[arg(long, default_value_t = 0.1)]
    pub trans: f64,
    #[arg(long, default_value_t = 0.1)]
    pub scale_frac: f64,
    #[command(flatten)]
    pub optim: OptimFlags,
}

#[derive(Debug, Args)]
pub struct ResolveArgs {
    #[arg(long)]
    pub db: PathBuf,
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long)]
    pub anchor: Option<f64>,
    #[command(flatten)]
    pub optim: OptimFlags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Metric {
    Iou,
    Map,
    Miv,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Database indexed by the predicted scenes.
    #[arg(long)]
    pub db: PathBuf,
    /// Database indexed by the ground-truth scenes (defaults to --db).
    #[arg(long)]
    pub gt_db: Option<PathBuf>,
    /// Scene file or directory of scene files.
    #[arg(long)]
    pub pred: PathBuf,
    /// Scene file or directory with the same file names as --pred.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub metric: Metric,
    #[arg(long)]
    pub res: Option<usize>,
    /// IoU threshold for mAP; repeatable.
    #[arg(long)]
    pub thresh: Vec<f64>,
    /// Write the JSON report here instead of standard output.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExportFormat {
    Obj,
    Ply,
    Points,
    Sdfg,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut msg = e.to_string();
            for cause in e.chain().skip(1) {
                let c = cause.to_string();
                if !msg.ends_with(&c) {
                    msg = format!("{msg}: {c}");
                }
            }
            eprintln!("error: {msg}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
