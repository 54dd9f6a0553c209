//! The `lesion-triage` command-line workflow.
//!
//! Every subcommand resolves [`Settings`] from defaults, the optional
//! `lesion-triage.toml`, `--set key=value` overrides and finally the explicit
//! flags, writes a reproducibility header into the output directory, then runs.
//! Failures print one JSON object on stderr and exit with 2 (usage), 3 (data)
//! or 4 (model).

pub mod commands;
pub mod error;
pub mod settings;

use std::ffi::OsString;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use lesion_triage_core::eval::ScoreMode;
use lesion_triage_core::Source;

pub use error::CliError;
pub use settings::Settings;

#[derive(Debug, Parser)]
#[command(name = "lesion-triage", version, about = "Lesion triage dataset, training, evaluation and service workflow")]
pub struct Cli {
    /// Image manifest (JSON Lines).
    #[arg(long, global = true, value_name = "PATH")]
    pub manifest: Option<PathBuf>,
    /// Directory holding the segmenter and classifier artifacts.
    #[arg(long, global = true, value_name = "DIR")]
    pub model_dir: Option<PathBuf>,
    /// Directory for reports, logs and the run header.
    #[arg(long, global = true, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Configuration override, e.g. `classifier.epochs=20`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Configuration file [default: lesion-triage.toml when present].
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

impl Cli {
    pub fn manifest(&self) -> PathBuf {
        self.manifest.clone().unwrap_or_else(|| "manifest.jsonl".into())
    }

    pub fn model_dir(&self) -> PathBuf {
        self.model_dir.clone().unwrap_or_else(|| "models".into())
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| "out".into())
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a manifest from class-named folders or procedurally generated images.
    Ingest {
        /// Folder with one sub-folder per class token (warts, hsv, cancer,
        /// candidiasis, syphilis, none). `x.mask.png` and `x.lesion.png` next
        /// to `x.png` are picked up as subject and lesion masks.
        #[arg(long, value_name = "DIR", required_unless_present = "synthetic", conflicts_with = "synthetic")]
        source_dir: Option<PathBuf>,
        /// Generate this many synthetic scenes instead, classes round-robin.
        #[arg(long, value_name = "N")]
        synthetic: Option<usize>,
        /// Provenance recorded for ingested folder images.
        #[arg(long, value_enum, default_value = "clinician")]
        source: SourceArg,
    },
    /// Top up every disease class with overlay composites (left unverified).
    Augment {
        /// Records per disease class afterwards [default: largest class].
        #[arg(long)]
        target: Option<usize>,
        /// Output manifest [default: <manifest>.augmented.jsonl].
        #[arg(long, value_name = "PATH")]
        output: Option<PathBuf>,
    },
    /// Assign train/validation tags in place (atomic rewrite).
    Split {
        #[arg(long)]
        fraction: Option<f64>,
        /// Keep augmented records out of validation.
        #[arg(long)]
        exclude_augmented: bool,
    },
    /// Train the subject segmenter on records with subject masks.
    TrainSeg,
    /// Train the classifier on eligible training records.
    TrainCls {
        /// Review database whose verdicts are applied before selection.
        #[arg(long, value_name = "PATH")]
        review_store: Option<PathBuf>,
    },
    /// Run the pipeline on the validation split and write reports.
    Eval {
        #[arg(long, value_enum, default_value = "both")]
        mode: ModeArg,
    },
    /// Score an existing prediction log; optionally summarize submissions.
    Report {
        /// Prediction log [default: <out-dir>/predictions.csv].
        #[arg(long, value_name = "PATH")]
        predictions: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "both")]
        mode: ModeArg,
        /// Service database for the questionnaire summary.
        #[arg(long, value_name = "PATH")]
        store: Option<PathBuf>,
        /// Start of the summary window (RFC 3339 or YYYY-MM-DD).
        #[arg(long)]
        from: Option<String>,
        /// End of the summary window, inclusive.
        #[arg(long)]
        to: Option<String>,
    },
    /// Classify one image.
    Infer {
        #[arg(long, value_name = "PATH")]
        image: PathBuf,
        /// Write the saliency overlay PNG here.
        #[arg(long, value_name = "PATH")]
        overlay: Option<PathBuf>,
    },
    /// Run the HTTP service. Other settings come from the LT_* environment.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Service database [default: LT_STORE_PATH or lesion-triage.sqlite3].
        #[arg(long, value_name = "PATH")]
        store: Option<PathBuf>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Ingest { .. } => "ingest",
            Command::Augment { .. } => "augment",
            Command::Split { .. } => "split",
            Command::TrainSeg => "train-seg",
            Command::TrainCls { .. } => "train-cls",
            Command::Eval { .. } => "eval",
            Command::Report { .. } => "report",
            Command::Infer { .. } => "infer",
            Command::Serve { .. } => "serve",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SourceArg {
    Clinician,
    Web,
    App,
}

impl From<SourceArg> for Source {
    fn from(s: SourceArg) -> Self {
        match s {
            SourceArg::Clinician => Source::Clinician,
            SourceArg::Web => Source::WebScraped,
            SourceArg::App => Source::AppSourced,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Initial,
    Refined,
    Both,
}

impl ModeArg {
    pub fn modes(self) -> &'static [ScoreMode] {
        match self {
            ModeArg::Initial => &[ScoreMode::Initial],
            ModeArg::Refined => &[ScoreMode::Refined],
            ModeArg::Both => &ScoreMode::BOTH,
        }
    }
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.to_json());
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let mut settings = Settings::resolve(cli.config.as_deref(), &cli.overrides)?;
    if let Some(seed) = cli.seed {
        settings.seed = seed;
        settings.segmenter.seed = seed;
        settings.classifier.seed = seed;
    }
    let out_dir = cli.out_dir();
    write_header(&out_dir, cli.command.name(), &settings)?;
    commands::dispatch(cli, &settings)
}

/// Seed, configuration hash and source revision for this run.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RunHeader {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub config_hash: String,
    pub git_describe: String,
}

pub const HEADER_FILE: &str = "run-header.json";

fn write_header(out_dir: &Path, command: &str, settings: &Settings) -> Result<(), CliError> {
    std::fs::create_dir_all(out_dir)?;
    let header = RunHeader {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: command.into(),
        seed: settings.seed,
        config_hash: settings.hash(),
        git_describe: git_describe(),
    };
    let text = serde_json::to_string_pretty(&header).expect("header serializes");
    std::fs::write(out_dir.join(HEADER_FILE), text + "\n")?;
    Ok(())
}

fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}
