//! Bundle-level calibration, client routing, pack scoring and sweeps.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{OckrError, Result};
use crate::featurestore::{FeaturePack, Label};
use crate::metrics::{auc, eer, evaluate, LabeledScore};
use crate::models::{
    leave_one_out_scores, train_bundle, ClientModel, ModelBundle, ThresholdSource, Thresholds,
    TrainOptions, TrainingMode, GLOBAL_CLIENT,
};
use crate::scoring::{
    calibration_from_scores, quantile_thresholds, score_frame, score_video, ScoreRecord,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ThresholdMode {
    /// Per-model lower quantile of bona fide calibration scores.
    Quantile { level: f64 },
    /// One global pair of EER thresholds from the labelled calibration pack.
    DevEer,
}

/// Model that scores videos claimed by `client`.
pub fn route<'a>(bundle: &'a ModelBundle, client: &str) -> Result<&'a ClientModel> {
    match bundle.mode() {
        TrainingMode::ClientIndependent => Ok(&bundle.models[GLOBAL_CLIENT]),
        TrainingMode::ClientSpecific => bundle
            .get(client)
            .ok_or_else(|| OckrError::UnknownClient(client.to_string())),
    }
}

fn model_rows(pack: &FeaturePack, model: &ClientModel) -> FeaturePack {
    if model.client_id == GLOBAL_CLIENT {
        pack.select(|m| m.label == Label::Bonafide)
    } else {
        pack.select(|m| m.label == Label::Bonafide && m.client == model.client_id)
    }
}

fn apply_scores(
    model: &mut ClientModel,
    scores: &[f64],
    mode: ThresholdMode,
) -> Result<Vec<String>> {
    let fit = calibration_from_scores(scores)?;
    model.calibration = Some(fit.calibration);
    if let ThresholdMode::Quantile { level } = mode {
        model.thresholds = Some(quantile_thresholds(scores, level)?);
    }
    Ok(fit
        .warning
        .into_iter()
        .map(|w| format!("{}: {w}", model.client_id))
        .collect())
}

/// Fits mu and sigma for every model from the bona fide rows of `calib`
/// belonging to its client, then sets thresholds per `mode`. Returns
/// warnings (floored variances).
pub fn calibrate_bundle(
    bundle: &mut ModelBundle,
    calib: &FeaturePack,
    mode: ThresholdMode,
) -> Result<Vec<String>> {
    let results: Vec<Result<(String, Vec<f64>)>> = bundle
        .models
        .par_iter()
        .map(|(id, model)| {
            let rows = model_rows(calib, model);
            if rows.is_empty() {
                return Err(OckrError::Protocol(format!(
                    "missing calibration bona fide rows for client {id}"
                )));
            }
            let scores = (0..rows.len())
                .map(|i| score_frame(model, &rows.frame(i, model.views())?))
                .collect::<Result<Vec<_>>>()?;
            Ok((id.clone(), scores))
        })
        .collect();
    let mut warnings = Vec::new();
    for r in results {
        let (id, scores) = r?;
        let model = bundle.models.get_mut(&id).expect("model present");
        warnings.extend(apply_scores(model, &scores, mode)?);
    }
    if mode == ThresholdMode::DevEer {
        set_dev_eer_thresholds(bundle, calib)?;
    }
    Ok(warnings)
}

/// Calibration fallback without a held-out split: leave-one-out scores on
/// each model's own enrolment rows.
pub fn calibrate_bundle_loo(
    bundle: &mut ModelBundle,
    enroll: &FeaturePack,
    opts: &TrainOptions,
    level: f64,
) -> Result<Vec<String>> {
    let mut warnings = Vec::new();
    let ids: Vec<String> = bundle.models.keys().cloned().collect();
    for id in ids {
        let model = bundle.models.get_mut(&id).expect("model present");
        let rows = model_rows(enroll, model);
        let opts = TrainOptions {
            views: Some(model.views().to_vec()),
            ..opts.clone()
        };
        let scores = leave_one_out_scores(&rows, &opts)?;
        warnings.extend(apply_scores(
            model,
            &scores,
            ThresholdMode::Quantile { level },
        )?);
        warnings.push(format!(
            "{id}: calibrated from leave-one-out enrolment scores"
        ));
    }
    Ok(warnings)
}

fn set_dev_eer_thresholds(bundle: &mut ModelBundle, dev: &FeaturePack) -> Result<()> {
    let records = score_pack(bundle, dev)?;
    let (_, raw) = eer(&labeled_scores(&records, ScoreLevel::VideoRaw)?)?;
    let (_, prob) = eer(&labeled_scores(&records, ScoreLevel::VideoProb)?)?;
    for model in bundle.models.values_mut() {
        model.thresholds = Some(Thresholds {
            raw,
            prob,
            source: ThresholdSource::DevEer,
            level: None,
        });
    }
    Ok(())
}

/// Scores every video of `pack` against the model of its claimed client.
pub fn score_pack(bundle: &ModelBundle, pack: &FeaturePack) -> Result<Vec<ScoreRecord>> {
    score_pack_counted(bundle, pack).map(|(r, _)| r)
}

/// As [`score_pack`], also returning the total kernel evaluations spent.
pub fn score_pack_counted(
    bundle: &ModelBundle,
    pack: &FeaturePack,
) -> Result<(Vec<ScoreRecord>, u64)> {
    let scored: Vec<(ScoreRecord, u64)> = pack
        .videos()
        .par_iter()
        .map(|(client, video, rows)| {
            let model = route(bundle, client)?;
            let frames = rows
                .iter()
                .map(|&i| pack.frame(i, model.views()))
                .collect::<Result<Vec<_>>>()?;
            let vs = score_video(model, &frames)?;
            let evals = vs.kernel_evals;
            let meta = &pack.meta()[rows[0]];
            let record = ScoreRecord::new(client, video, vs, Some(meta.label), meta.pais.clone());
            Ok((record, evals))
        })
        .collect::<Result<Vec<_>>>()?;
    let total = scored.iter().map(|(_, e)| e).sum();
    Ok((scored.into_iter().map(|(r, _)| r).collect(), total))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreLevel {
    Frame,
    VideoRaw,
    VideoProb,
}

impl std::str::FromStr for ScoreLevel {
    type Err = OckrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "frame" => Ok(ScoreLevel::Frame),
            "video_raw" | "video-raw" | "raw" => Ok(ScoreLevel::VideoRaw),
            "video_prob" | "video-prob" | "prob" => Ok(ScoreLevel::VideoProb),
            other => Err(OckrError::Invalid(format!("unknown score level {other:?}"))),
        }
    }
}

/// Flattens score records into labelled scores at the requested level.
pub fn labeled_scores(records: &[ScoreRecord], level: ScoreLevel) -> Result<Vec<LabeledScore>> {
    let mut out = Vec::new();
    for r in records {
        let label = r.label.ok_or_else(|| {
            OckrError::InvalidRow(format!(
                "score record {}/{} has no label",
                r.client, r.video
            ))
        })?;
        let make = |score| LabeledScore {
            score,
            label,
            pais: r.pais.clone(),
        };
        match level {
            ScoreLevel::Frame => out.extend(r.frames.iter().map(|&s| make(s))),
            ScoreLevel::VideoRaw => out.push(make(r.raw)),
            ScoreLevel::VideoProb => {
                let p = r.prob.ok_or_else(|| {
                    OckrError::InvalidRow(format!(
                        "score record {}/{} has no probabilistic score; calibrate the bundle first",
                        r.client, r.video
                    ))
                })?;
                out.push(make(p));
            }
        }
    }
    Ok(out)
}

/// One row of a cardinality sweep. `target_nnz` is `None` for the dense
/// baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub target_nnz: Option<usize>,
    pub mean_nnz: f64,
    /// Mean over models of `nnz * views`.
    pub kernel_evals_per_frame: f64,
    /// Kernel evaluations counted while scoring the test pack.
    pub kernel_evals: u64,
    /// Dense evaluation count divided by this row's.
    pub speedup: f64,
    pub auc_frame: f64,
    pub auc_video: f64,
    pub acer: f64,
}

/// Trains one bundle per cardinality (plus the dense baseline) and scores
/// `test` with each. ACER uses raw video scores at the dev EER threshold
/// when `dev` is given, otherwise at the test EER threshold.
pub fn sparsity_sweep(
    enroll: &FeaturePack,
    dev: Option<&FeaturePack>,
    test: &FeaturePack,
    mode: TrainingMode,
    base: &TrainOptions,
    nnz: &[usize],
) -> Result<Vec<SweepRow>> {
    let targets: Vec<Option<usize>> = std::iter::once(None)
        .chain(nnz.iter().map(|&k| Some(k)))
        .collect();
    let mut rows: Vec<SweepRow> = Vec::with_capacity(targets.len());
    for target in targets {
        let opts = TrainOptions {
            target_nnz: target,
            ..base.clone()
        };
        let bundle = train_bundle(enroll, mode, &opts)?;
        let (records, kernel_evals) = score_pack_counted(&bundle, test)?;
        let video = labeled_scores(&records, ScoreLevel::VideoRaw)?;
        let dev_video = match dev {
            Some(d) => Some(labeled_scores(
                &score_pack(&bundle, d)?,
                ScoreLevel::VideoRaw,
            )?),
            None => None,
        };
        let report = evaluate(&video, dev_video.as_deref())?;
        let n_models = bundle.len() as f64;
        let dense_evals = rows.first().map_or(kernel_evals, |r| r.kernel_evals);
        rows.push(SweepRow {
            target_nnz: target,
            mean_nnz: bundle
                .models
                .values()
                .map(|m| m.n_support() as f64)
                .sum::<f64>()
                / n_models,
            kernel_evals_per_frame: bundle
                .models
                .values()
                .map(|m| m.kernel_evals_per_frame() as f64)
                .sum::<f64>()
                / n_models,
            kernel_evals,
            speedup: dense_evals as f64 / kernel_evals as f64,
            auc_frame: auc(&labeled_scores(&records, ScoreLevel::Frame)?)?,
            auc_video: report.auc,
            acer: report.acer,
        });
    }
    Ok(rows)
}
