//! `ockr`: train, calibrate, score and evaluate one-class sparse
//! multiple-kernel models over feature packs.
//!
//! Exit codes: 0 on success, 2 for bad inputs or protocol violations, 3 for
//! numerical failures.

mod commands;
mod config;
mod provenance;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};
use ockr_core::{OckrError, ScoreLevel, ThresholdMode, TrainingMode};

use crate::config::RunConfig;

#[derive(Debug, Parser)]
#[command(
    name = "ockr",
    version,
    about = "One-class sparse multiple-kernel fusion regression"
)]
struct Cli {
    /// TOML run configuration. Flags override values from the file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic enrol/dev/test feature packs.
    Synth(SynthArgs),
    /// Train one model per client (or one global model) and write a bundle.
    Fit(FitArgs),
    /// Fit score calibration and decision thresholds for every model.
    Calibrate(CalibrateArgs),
    /// Score every test video against its claimed client's model (JSONL).
    Score(ScoreArgs),
    /// Compute APCER/BPCER/ACER, EER and AUC, optionally with a sparsity sweep.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Output directory; packs go to its enroll/, dev/ and test/ subdirectories.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Generator seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of clients.
    #[arg(long)]
    clients: Option<usize>,
    /// Frames per video.
    #[arg(long)]
    frames: Option<usize>,
    /// Distance attacks are pushed from the client centre.
    #[arg(long)]
    attack_shift: Option<f64>,
}

#[derive(Debug, Args, Default)]
struct TrainArgs {
    /// Sparsity budget: number of support rows kept per model.
    #[arg(long)]
    target_nnz: Option<usize>,
    /// Keep every training row (closed-form solve, no sparsity).
    #[arg(long)]
    dense: bool,
    /// Training mode.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Comma-separated `<region>_<rep>` views to fuse (default: all).
    #[arg(long, value_delimiter = ',')]
    views: Option<Vec<String>>,
    /// Ridge added to the Gram diagonal for the dense solve.
    #[arg(long)]
    jitter: Option<f64>,
}

#[derive(Debug, Args)]
struct FitArgs {
    /// Enrolment pack directory (bona fide rows only).
    #[arg(long, value_name = "DIR")]
    enroll: Option<PathBuf>,
    /// Output model bundle.
    #[arg(long, value_name = "FILE")]
    model: Option<PathBuf>,
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    /// Model bundle to calibrate.
    #[arg(long, value_name = "FILE")]
    model: Option<PathBuf>,
    /// Where to write the calibrated bundle (default: overwrite --model).
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Development pack with bona fide rows for every client.
    #[arg(long, value_name = "DIR")]
    dev: Option<PathBuf>,
    /// Enrolment pack, used for leave-one-out calibration when --dev is absent.
    #[arg(long, value_name = "DIR")]
    enroll: Option<PathBuf>,
    /// How decision thresholds are chosen.
    #[arg(long, value_enum)]
    threshold_mode: Option<ThresholdArg>,
    /// Confidence level for quantile thresholds.
    #[arg(long)]
    confidence: Option<f64>,
    /// Fail instead of falling back to leave-one-out calibration.
    #[arg(long)]
    no_loo: bool,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    /// Model bundle.
    #[arg(long, value_name = "FILE")]
    model: Option<PathBuf>,
    /// Test pack directory.
    #[arg(long, value_name = "DIR")]
    test: Option<PathBuf>,
    /// Output JSONL; a `.provenance.json` sidecar is written next to it.
    #[arg(long, value_name = "FILE")]
    scores: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Labelled scores JSONL from `score`.
    #[arg(long, value_name = "FILE")]
    scores: Option<PathBuf>,
    /// Labelled development scores; the threshold is their EER point.
    #[arg(long, value_name = "FILE")]
    dev_scores: Option<PathBuf>,
    /// Score level to evaluate.
    #[arg(long, value_enum)]
    level: Option<LevelArg>,
    /// Output report JSON (default: stdout).
    #[arg(long, value_name = "FILE")]
    report: Option<PathBuf>,
    /// Comma-separated NNZ budgets for a sparsity sweep (needs --enroll and --test).
    #[arg(long, value_delimiter = ',')]
    sweep_nnz: Option<Vec<usize>>,
    /// Also write the sweep table as CSV.
    #[arg(long, value_name = "FILE")]
    csv: Option<PathBuf>,
    /// Enrolment pack for the sweep.
    #[arg(long, value_name = "DIR")]
    enroll: Option<PathBuf>,
    /// Development pack for sweep thresholds.
    #[arg(long, value_name = "DIR")]
    dev: Option<PathBuf>,
    /// Test pack for the sweep.
    #[arg(long, value_name = "DIR")]
    test: Option<PathBuf>,
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    #[value(alias = "client_specific")]
    ClientSpecific,
    #[value(alias = "client_independent")]
    ClientIndependent,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ThresholdArg {
    Quantile,
    #[value(alias = "dev_eer")]
    DevEer,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LevelArg {
    Frame,
    #[value(alias = "video_raw")]
    VideoRaw,
    #[value(alias = "video_prob")]
    VideoProb,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn set_path(slot: &mut Option<PathBuf>, value: Option<PathBuf>) {
    if value.is_some() {
        *slot = value;
    }
}

impl TrainArgs {
    fn apply(self, c: &mut RunConfig) {
        set(&mut c.target_nnz, self.target_nnz);
        if self.target_nnz.is_some() {
            c.dense = false;
        }
        if self.dense {
            c.dense = true;
        }
        set(
            &mut c.mode,
            self.mode.map(|m| match m {
                ModeArg::ClientSpecific => TrainingMode::ClientSpecific,
                ModeArg::ClientIndependent => TrainingMode::ClientIndependent,
            }),
        );
        set(&mut c.views, self.views);
        set(&mut c.jitter, self.jitter);
    }
}

fn apply_threshold(c: &mut RunConfig, mode: Option<ThresholdArg>, confidence: Option<f64>) {
    let current = match c.threshold {
        ThresholdMode::Quantile { level } => level,
        ThresholdMode::DevEer => 0.95,
    };
    let level = confidence.unwrap_or(current);
    c.threshold = match (mode, c.threshold) {
        (Some(ThresholdArg::DevEer), _) => ThresholdMode::DevEer,
        (Some(ThresholdArg::Quantile), _) | (None, ThresholdMode::Quantile { .. }) => {
            ThresholdMode::Quantile { level }
        }
        (None, ThresholdMode::DevEer) => ThresholdMode::DevEer,
    };
}

fn run(cli: Cli) -> Result<()> {
    let mut c = RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Synth(a) => {
            set_path(&mut c.synth_out, a.out);
            set(&mut c.synth.seed, a.seed);
            set(&mut c.synth.clients, a.clients);
            set(&mut c.synth.frames_per_video, a.frames);
            set(&mut c.synth.attack_shift, a.attack_shift);
            commands::synth(&c)
        }
        Command::Fit(a) => {
            set_path(&mut c.enroll, a.enroll);
            set_path(&mut c.model, a.model);
            a.train.apply(&mut c);
            commands::fit(&c)
        }
        Command::Calibrate(a) => {
            set_path(&mut c.model, a.model);
            set_path(&mut c.dev, a.dev);
            set_path(&mut c.enroll, a.enroll);
            apply_threshold(&mut c, a.threshold_mode, a.confidence);
            if a.no_loo {
                c.loo_fallback = false;
            }
            commands::calibrate(&c, a.out.as_deref())
        }
        Command::Score(a) => {
            set_path(&mut c.model, a.model);
            set_path(&mut c.test, a.test);
            set_path(&mut c.scores, a.scores);
            commands::score(&c)
        }
        Command::Evaluate(a) => {
            set_path(&mut c.scores, a.scores);
            set_path(&mut c.dev_scores, a.dev_scores);
            set_path(&mut c.report, a.report);
            set_path(&mut c.sweep_csv, a.csv);
            set_path(&mut c.enroll, a.enroll);
            set_path(&mut c.dev, a.dev);
            set_path(&mut c.test, a.test);
            set(&mut c.sweep_nnz, a.sweep_nnz);
            set(
                &mut c.level,
                a.level.map(|l| match l {
                    LevelArg::Frame => ScoreLevel::Frame,
                    LevelArg::VideoRaw => ScoreLevel::VideoRaw,
                    LevelArg::VideoProb => ScoreLevel::VideoProb,
                }),
            );
            a.train.apply(&mut c);
            commands::evaluate(&c)
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err
        .chain()
        .filter_map(|e| e.downcast_ref::<OckrError>())
        .any(OckrError::is_numerical);
    if numerical {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
