//! Run configuration: an optional TOML file overlaid by command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use ockr_core::{ScoreLevel, SynthSpec, ThresholdMode, TrainingMode};
use serde::{Deserialize, Serialize};

/// Every setting any subcommand reads. The effective value (file plus
/// flags) is what gets echoed into output provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub enroll: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub scores: Option<PathBuf>,
    pub dev_scores: Option<PathBuf>,
    pub report: Option<PathBuf>,
    /// Sparsity budget; ignored when `dense` is set.
    pub target_nnz: usize,
    pub dense: bool,
    pub jitter: f64,
    pub mode: TrainingMode,
    /// `<region>_<rep>` ids; empty means every view of the pack.
    pub views: Vec<String>,
    pub threshold: ThresholdMode,
    /// Calibrate from leave-one-out enrolment scores when no dev pack is set.
    pub loo_fallback: bool,
    pub level: ScoreLevel,
    pub sweep_nnz: Vec<usize>,
    pub sweep_csv: Option<PathBuf>,
    pub synth_out: Option<PathBuf>,
    pub synth: SynthSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            enroll: None,
            dev: None,
            test: None,
            model: None,
            scores: None,
            dev_scores: None,
            report: None,
            target_nnz: 5,
            dense: false,
            jitter: 0.0,
            mode: TrainingMode::ClientSpecific,
            views: Vec::new(),
            threshold: ThresholdMode::Quantile { level: 0.95 },
            loo_fallback: true,
            level: ScoreLevel::VideoRaw,
            sweep_nnz: Vec::new(),
            sweep_csv: None,
            synth_out: None,
            synth: SynthSpec::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn require<'a>(&self, value: &'a Option<PathBuf>, name: &str) -> Result<&'a Path> {
        value.as_deref().with_context(|| {
            format!(
                "missing {name}: pass --{} or set it in the config",
                name.replace('_', "-")
            )
        })
    }
}
