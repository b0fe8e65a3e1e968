//! Frame projection, video-level fusion and decisions.
//!
//! A frame's raw score is `sum_i alpha_i * kfused(z, x_i)` over the support
//! rows of a model. Video scores are the mean of frame scores (raw fusion)
//! or, once a model is calibrated, the mean of `Phi((s - mu) / sigma)`
//! (probabilistic fusion). Scores at or above the threshold are bona fide.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{OckrError, Result};
use crate::featurestore::Label;
use crate::kernels::fused_cross_kernel_counted;
use crate::models::{Calibration, ClientModel, ThresholdSource, Thresholds};

/// Raw-score threshold used by models that were never calibrated: halfway
/// between the bona fide target response (1) and the outlier at the origin.
pub const DEFAULT_RAW_THRESHOLD: f64 = 0.5;
/// Confidence level used when no other is configured.
pub const DEFAULT_CONFIDENCE: f64 = 0.95;

/// Raw frame score and the number of kernel evaluations spent on it.
pub fn score_frame_counted(model: &ClientModel, z: &[&[f64]]) -> Result<(f64, u64)> {
    let support = model.support_views();
    if model.n_support() == 0 {
        // An all-zero solution projects every frame onto the origin.
        return Ok((0.0, 0));
    }
    let (k, evals) = fused_cross_kernel_counted(z, &support, &model.config)?;
    let score = model.alpha.iter().zip(&k).map(|(a, k)| a * k).sum();
    Ok((score, evals))
}

pub fn score_frame(model: &ClientModel, z: &[&[f64]]) -> Result<f64> {
    score_frame_counted(model, z).map(|(s, _)| s)
}

/// Standard normal CDF of the standardised score.
pub fn probabilistic_score(score: f64, calibration: &Calibration) -> f64 {
    Normal::standard().cdf((score - calibration.mu) / calibration.sigma)
}

pub fn decide(score: f64, tau: f64) -> Label {
    if score >= tau {
        Label::Bonafide
    } else {
        Label::Attack
    }
}

/// Numerical content of a scored video.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoScore {
    pub frame_scores: Vec<f64>,
    pub raw: f64,
    pub prob: Option<f64>,
    pub decision_raw: Label,
    pub decision_prob: Option<Label>,
    pub kernel_evals: u64,
}

pub fn score_video(model: &ClientModel, frames: &[Vec<&[f64]>]) -> Result<VideoScore> {
    if frames.is_empty() {
        return Err(OckrError::Invalid(
            "cannot score a video with no frames".into(),
        ));
    }
    let mut frame_scores = Vec::with_capacity(frames.len());
    let mut kernel_evals = 0;
    for z in frames {
        let (s, e) = score_frame_counted(model, z)?;
        frame_scores.push(s);
        kernel_evals += e;
    }
    let count = frame_scores.len() as f64;
    let raw = frame_scores.iter().sum::<f64>() / count;
    let prob = model.calibration.as_ref().map(|c| {
        frame_scores
            .iter()
            .map(|&s| probabilistic_score(s, c))
            .sum::<f64>()
            / count
    });
    let (tau_raw, tau_prob) = match model.thresholds {
        Some(t) => (t.raw, t.prob),
        None => (DEFAULT_RAW_THRESHOLD, 1.0 - DEFAULT_CONFIDENCE),
    };
    Ok(VideoScore {
        decision_raw: decide(raw, tau_raw),
        decision_prob: prob.map(|p| decide(p, tau_prob)),
        frame_scores,
        raw,
        prob,
        kernel_evals,
    })
}

/// One line of the scores JSONL output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub client: String,
    pub video: String,
    pub frames: Vec<f64>,
    pub raw: f64,
    pub prob: Option<f64>,
    pub decision_raw: Label,
    pub decision_prob: Option<Label>,
    pub label: Option<Label>,
    pub pais: Option<String>,
}

impl ScoreRecord {
    pub fn new(
        client: impl Into<String>,
        video: impl Into<String>,
        score: VideoScore,
        label: Option<Label>,
        pais: Option<String>,
    ) -> Self {
        ScoreRecord {
            client: client.into(),
            video: video.into(),
            frames: score.frame_scores,
            raw: score.raw,
            prob: score.prob,
            decision_raw: score.decision_raw,
            decision_prob: score.decision_prob,
            label,
            pais,
        }
    }
}

/// Outcome of a calibration fit; `warning` is set when sigma was floored.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationFit {
    pub calibration: Calibration,
    pub warning: Option<String>,
}

/// Sample mean and standard deviation (ddof = 1), sigma floored at
/// `1e-6 * max(1, |mu|)`.
pub fn calibration_from_scores(scores: &[f64]) -> Result<CalibrationFit> {
    if scores.len() < 2 {
        return Err(OckrError::TooFewRows {
            needed: 2,
            found: scores.len(),
        });
    }
    let n = scores.len() as f64;
    let mu = scores.iter().sum::<f64>() / n;
    let var = scores.iter().map(|s| (s - mu) * (s - mu)).sum::<f64>() / (n - 1.0);
    let floor = 1e-6 * mu.abs().max(1.0);
    let sigma = var.sqrt();
    if sigma < floor || !sigma.is_finite() {
        let msg =
            format!("calibration variance degenerate (sigma {sigma:e}); floored at {floor:e}");
        log::warn!("{msg}");
        return Ok(CalibrationFit {
            calibration: Calibration { mu, sigma: floor },
            warning: Some(msg),
        });
    }
    Ok(CalibrationFit {
        calibration: Calibration { mu, sigma },
        warning: None,
    })
}

/// Scores bona fide calibration frames through `model` and fits a Gaussian.
pub fn fit_calibration(
    model: &ClientModel,
    calib_frames: &[Vec<&[f64]>],
) -> Result<CalibrationFit> {
    let scores = calib_frames
        .iter()
        .map(|z| score_frame(model, z))
        .collect::<Result<Vec<_>>>()?;
    calibration_from_scores(&scores)
}

/// Linear-interpolation quantile of `values` at probability `p`.
pub fn quantile(values: &[f64], p: f64) -> f64 {
    assert!(!values.is_empty(), "quantile of an empty sample");
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Thresholds at confidence `level`: the raw threshold is the
/// `(1 - level)` quantile of bona fide calibration scores and the
/// probabilistic threshold is `1 - level`.
pub fn quantile_thresholds(calib_scores: &[f64], level: f64) -> Result<Thresholds> {
    if !(level > 0.0 && level < 1.0) {
        return Err(OckrError::Invalid(format!(
            "confidence level {level} must lie in (0, 1)"
        )));
    }
    if calib_scores.is_empty() {
        return Err(OckrError::TooFewRows {
            needed: 1,
            found: 0,
        });
    }
    Ok(Thresholds {
        raw: quantile(calib_scores, 1.0 - level),
        prob: 1.0 - level,
        source: ThresholdSource::Quantile,
        level: Some(level),
    })
}
