//! Command-line front end. Every pipeline stage is a subcommand; a JSON
//! config file can pin any setting and flags override the file. Given the
//! same inputs and seed, every subcommand writes byte-identical outputs.

mod commands;

use std::env;
use std::fmt;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FreezeGroup, Head, ModelSpec};
use crate::train::{SelectionMode, Task, TrainConfig};

/// Seed source of last resort, behind `--seed` and the config file.
pub const SEED_ENV: &str = "FTBRAIN_SEED";

#[derive(Debug, Parser)]
#[command(
    name = "ftbrain",
    version,
    about = "Entropy-guided slice selection, transfer training, and trend analysis for volumetric scans"
)]
pub struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Master seed. Wins over the config file and FTBRAIN_SEED.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory. Default: runs/<timestamp>-<seed>.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Directory holding .mvol volumes.
    #[arg(long, global = true, value_name = "DIR")]
    pub data: Option<PathBuf>,
    /// Fold worker threads. Any value gives the same outputs; 1 keeps logs
    /// ordered.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Classification task: ad-nc, ad-mci, mci-nc, or 3way.
    #[arg(long, global = true)]
    pub task: Option<String>,
    /// Architecture preset: desk or paper.
    #[arg(long, global = true)]
    pub preset: Option<String>,
    /// Training epochs per fold.
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    /// Mini-batch size.
    #[arg(long, global = true)]
    pub batch_size: Option<usize>,
    /// Adam learning rate.
    #[arg(long, global = true)]
    pub lr: Option<f64>,
    /// Freeze group: all, g1, g2, g3, or g4.
    #[arg(long, global = true)]
    pub freeze: Option<String>,
    /// Slices kept per subject (8, 16, or 32).
    #[arg(long, global = true)]
    pub images_per_subject: Option<usize>,
    /// Slice selection mode: entropy or random.
    #[arg(long, global = true)]
    pub selection: Option<String>,
    /// Cross-validation folds.
    #[arg(long, global = true)]
    pub k_folds: Option<usize>,
    #[command(subcommand)]
    pub cmd: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Generate a synthetic cohort of labeled volumes.
    Synth {
        /// Subjects per class.
        #[arg(long, default_value_t = 10)]
        subjects: usize,
        /// Volume extents as z,y,x.
        #[arg(long, default_value = "48,64,64")]
        dims: String,
    },
    /// Rank each volume's slices and export the picks as PGM plus manifest.
    Select {
        /// Slices kept per subject. Default: images_per_subject.
        #[arg(long)]
        k: Option<usize>,
    },
    /// Plan subject-wise class-stratified folds.
    Split,
    /// Train conv features on the synthetic source task.
    Pretrain,
    /// Cross-validated training on the target task.
    Train {
        /// Checkpoint whose conv stack seeds every fold.
        #[arg(long, value_name = "FILE")]
        pretrained: Option<PathBuf>,
        /// Use the GAP classifier so fold checkpoints support `cam`.
        #[arg(long)]
        cam_head: bool,
    },
    /// Score a checkpoint on every subject in the data directory.
    Eval {
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        /// Also report majority-vote accuracy over subjects.
        #[arg(long)]
        subject_vote: bool,
    },
    /// Class activation overlay for one slice image.
    Cam {
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        /// Input PGM slice.
        #[arg(long, value_name = "FILE")]
        image: PathBuf,
        /// Class to map. Default: the model's predicted class.
        #[arg(long)]
        class: Option<usize>,
        /// Also write the raw heatmap values as CSV.
        #[arg(long)]
        csv: bool,
    },
    /// Mann-Kendall trend test over a numeric series.
    Trend {
        /// Comma-separated values.
        #[arg(long, conflicts_with = "file")]
        values: Option<String>,
        /// File with one value per line, or a CSV when --column is given.
        #[arg(long)]
        file: Option<PathBuf>,
        /// Column to read from a headed CSV file.
        #[arg(long, requires = "file")]
        column: Option<String>,
    },
    /// Summarize an exported learning-curve CSV.
    Curves {
        #[arg(long, value_name = "FILE")]
        file: PathBuf,
    },
}

/// File form of a run configuration. Every field is optional; omitted ones
/// fall back to the preset defaults. Unknown keys are rejected.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub seed: Option<u64>,
    pub freeze_group: Option<FreezeGroup>,
    pub images_per_subject: Option<usize>,
    pub selection_mode: Option<SelectionMode>,
    pub k_folds: Option<usize>,
    pub task: Option<String>,
    pub preset: Option<String>,
    pub data_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub jobs: Option<usize>,
}

/// Architecture family for a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// 64x64 input, narrow widths; full experiments finish on one core.
    Desk,
    /// Full-size 128x128 topology.
    Paper,
}

impl Preset {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            other => Err(Error::Config(format!("unknown preset {other:?}, expected desk|paper"))),
        }
    }

    pub fn spec(self) -> ModelSpec {
        match self {
            Preset::Desk => ModelSpec::desk(),
            Preset::Paper => ModelSpec::paper(),
        }
    }

    /// The 3-class source-task variant of this preset's topology.
    pub fn source_spec(self) -> ModelSpec {
        ModelSpec { head: Head::Softmax3Way, ..self.spec() }
    }

    /// Training defaults tuned for this preset.
    pub fn base_train(self) -> TrainConfig {
        match self {
            Preset::Desk => TrainConfig::desk(),
            Preset::Paper => TrainConfig::default(),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Desk => "desk",
            Preset::Paper => "paper",
        })
    }
}

/// Target problem: one of the binary pairings or all three classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskChoice {
    Binary(Task),
    ThreeWay,
}

impl TaskChoice {
    pub fn parse(s: &str) -> Result<Self> {
        if s == "3way" {
            return Ok(TaskChoice::ThreeWay);
        }
        Task::parse(s)
            .map(TaskChoice::Binary)
            .map_err(|_| Error::Config(format!("unknown task {s:?}, expected ad-nc|ad-mci|mci-nc|3way")))
    }
}

impl fmt::Display for TaskChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskChoice::Binary(t) => t.fmt(f),
            TaskChoice::ThreeWay => f.write_str("3way"),
        }
    }
}

/// A fully merged run setup: flags beat the config file, which beats the
/// preset defaults; the seed falls back to FTBRAIN_SEED, then 0.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub train: TrainConfig,
    pub task: TaskChoice,
    pub preset: Preset,
    pub data_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub jobs: usize,
    /// Values the user pinned via flag or file, before defaults filled in.
    pub explicit: RunConfig,
}

fn env_seed() -> Result<u64> {
    match env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse::<u64>()
            .map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(env::VarError::NotPresent) => Ok(0),
        Err(e) => Err(Error::Config(format!("{SEED_ENV}: {e}"))),
    }
}

/// "YYYYmmddTHHMMSSZ" for a unix time, via the civil-from-days algorithm.
fn utc_stamp(unix: u64) -> String {
    let days = (unix / 86_400) as i64;
    let secs = unix % 86_400;
    let z = days + 719_468;
    let era = z.div_euclid(146_097);
    let doe = z.rem_euclid(146_097);
    let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let d = doy - (153 * mp + 2) / 5 + 1;
    let m = if mp < 10 { mp + 3 } else { mp - 9 };
    let y = yoe + era * 400 + i64::from(m <= 2);
    format!("{y:04}{m:02}{d:02}T{:02}{:02}{:02}Z", secs / 3600, (secs / 60) % 60, secs % 60)
}

fn default_out_dir(seed: u64) -> PathBuf {
    let unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    PathBuf::from("runs").join(format!("{}-{seed}", utc_stamp(unix)))
}

pub fn resolve(cli: &Cli) -> Result<Resolved> {
    let file = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("config {}: {e}", path.display())))?;
            serde_json::from_str::<RunConfig>(&text)
                .map_err(|e| Error::Config(format!("config {}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };
    let merged = RunConfig {
        epochs: cli.epochs.or(file.epochs),
        batch_size: cli.batch_size.or(file.batch_size),
        lr: cli.lr.or(file.lr),
        seed: cli.seed.or(file.seed),
        freeze_group: match &cli.freeze {
            Some(s) => Some(FreezeGroup::parse(s)?),
            None => file.freeze_group,
        },
        images_per_subject: cli.images_per_subject.or(file.images_per_subject),
        selection_mode: match &cli.selection {
            Some(s) => Some(SelectionMode::parse(s)?),
            None => file.selection_mode,
        },
        k_folds: cli.k_folds.or(file.k_folds),
        task: cli.task.clone().or(file.task),
        preset: cli.preset.clone().or(file.preset),
        data_dir: cli.data.clone().or(file.data_dir),
        out_dir: cli.out.clone().or(file.out_dir),
        jobs: cli.jobs.or(file.jobs),
    };

    let seed = match merged.seed {
        Some(s) => s,
        None => env_seed()?,
    };
    let preset = match merged.preset.as_deref() {
        Some(s) => Preset::parse(s)?,
        None => Preset::Desk,
    };
    let task = match merged.task.as_deref() {
        Some(s) => TaskChoice::parse(s)?,
        None => TaskChoice::Binary(Task::AdVsNc),
    };
    let base = preset.base_train();
    let train = TrainConfig {
        epochs: merged.epochs.unwrap_or(base.epochs),
        batch_size: merged.batch_size.unwrap_or(base.batch_size),
        lr: merged.lr.unwrap_or(base.lr),
        seed,
        freeze_group: merged.freeze_group.unwrap_or(base.freeze_group),
        images_per_subject: merged.images_per_subject.unwrap_or(base.images_per_subject),
        selection_mode: merged.selection_mode.unwrap_or(base.selection_mode),
        k_folds: merged.k_folds.unwrap_or(base.k_folds),
    };
    train.validate()?;
    let jobs = merged.jobs.unwrap_or(1);
    if jobs == 0 {
        return Err(Error::Config("jobs must be at least 1".into()));
    }
    let out_dir = merged.out_dir.clone().unwrap_or_else(|| default_out_dir(seed));
    Ok(Resolved {
        train,
        task,
        preset,
        data_dir: merged.data_dir.clone(),
        out_dir,
        jobs,
        explicit: merged,
    })
}

pub fn run(cli: &Cli) -> Result<()> {
    let res = resolve(cli)?;
    match &cli.cmd {
        Cmd::Synth { subjects, dims } => commands::synth(&res, *subjects, dims),
        Cmd::Select { k } => commands::select(&res, *k),
        Cmd::Split => commands::split(&res),
        Cmd::Pretrain => commands::pretrain(&res),
        Cmd::Train { pretrained, cam_head } => {
            commands::train_run(&res, pretrained.as_deref(), *cam_head)
        }
        Cmd::Eval { checkpoint, subject_vote } => commands::eval_run(&res, checkpoint, *subject_vote),
        Cmd::Cam { checkpoint, image, class, csv } => {
            commands::cam_run(&res, checkpoint, image, *class, *csv)
        }
        Cmd::Trend { values, file, column } => {
            commands::trend_run(values.as_deref(), file.as_deref(), column.as_deref())
        }
        Cmd::Curves { file } => commands::curves_run(file),
    }
}

/// Process entry point: 0 on success, 1 when arguments or configuration are
/// invalid, 2 when the work itself fails.
pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0u8,
                _ => 1u8,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ftbrain: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
