//! Presentation attack detection metrics.
//!
//! Higher scores mean "more bona fide" and a sample is accepted as bona fide
//! when `score >= threshold`. Hence:
//!
//! * APCER of a PAIS (and FAR overall) is the fraction of attacks with
//!   `score >= threshold`;
//! * BPCER (FRR) is the fraction of bona fide samples with `score < threshold`;
//! * APCER is the maximum over PAIS and ACER is `(APCER + BPCER) / 2`.
//!
//! AUC treats bona fide as the positive class and credits ties with one half.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{OckrError, Result};
use crate::featurestore::Label;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledScore {
    pub score: f64,
    pub label: Label,
    pub pais: Option<String>,
}

impl LabeledScore {
    pub fn bonafide(score: f64) -> Self {
        LabeledScore {
            score,
            label: Label::Bonafide,
            pais: None,
        }
    }

    pub fn attack(score: f64, pais: impl Into<String>) -> Self {
        LabeledScore {
            score,
            label: Label::Attack,
            pais: Some(pais.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRates {
    pub apcer_by_pais: BTreeMap<String, f64>,
    pub apcer: f64,
    pub bpcer: f64,
}

impl ErrorRates {
    pub fn acer(&self) -> f64 {
        (self.apcer + self.bpcer) / 2.0
    }
}

fn split(scores: &[LabeledScore]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut bona = Vec::new();
    let mut attack = Vec::new();
    for s in scores {
        match s.label {
            Label::Bonafide => bona.push(s.score),
            Label::Attack => attack.push(s.score),
        }
    }
    if bona.is_empty() {
        return Err(OckrError::EmptyClass("no bona fide scores".into()));
    }
    if attack.is_empty() {
        return Err(OckrError::EmptyClass("no attack scores".into()));
    }
    Ok((bona, attack))
}

pub fn apcer_bpcer(scores: &[LabeledScore], threshold: f64) -> Result<ErrorRates> {
    split(scores)?;
    let mut per_pais: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    let mut bona = (0usize, 0usize);
    for s in scores {
        match s.label {
            Label::Bonafide => {
                bona.1 += 1;
                if s.score < threshold {
                    bona.0 += 1;
                }
            }
            Label::Attack => {
                let pais = s
                    .pais
                    .as_ref()
                    .ok_or_else(|| OckrError::InvalidRow("attack score without PAIS".into()))?;
                let e = per_pais.entry(pais.clone()).or_default();
                e.1 += 1;
                if s.score >= threshold {
                    e.0 += 1;
                }
            }
        }
    }
    let apcer_by_pais: BTreeMap<String, f64> = per_pais
        .into_iter()
        .map(|(p, (hit, total))| (p, hit as f64 / total as f64))
        .collect();
    let apcer = apcer_by_pais.values().fold(0.0f64, |m, v| m.max(*v));
    Ok(ErrorRates {
        apcer_by_pais,
        apcer,
        bpcer: bona.0 as f64 / bona.1 as f64,
    })
}

/// Candidate thresholds: the smallest score (accept everything), every
/// midpoint between consecutive distinct scores, and a value above the
/// largest score (reject everything). Ascending.
pub fn candidate_thresholds(scores: &[f64]) -> Vec<f64> {
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let mut out = Vec::with_capacity(sorted.len() + 1);
    if let (Some(&lo), Some(&hi)) = (sorted.first(), sorted.last()) {
        out.push(lo);
        for w in sorted.windows(2) {
            out.push(w[0] + (w[1] - w[0]) / 2.0);
        }
        out.push(hi + hi.abs().max(1.0));
    }
    out
}

/// Equal error rate and its threshold.
///
/// Minimises `|FAR - FRR|` over [`candidate_thresholds`], reporting
/// `(FAR + FRR) / 2` there; the lowest threshold wins ties.
pub fn eer(scores: &[LabeledScore]) -> Result<(f64, f64)> {
    let (mut bona, mut attack) = split(scores)?;
    bona.sort_by(f64::total_cmp);
    attack.sort_by(f64::total_cmp);
    let all: Vec<f64> = scores.iter().map(|s| s.score).collect();
    let nb = bona.len() as u128;
    let na = attack.len() as u128;
    let mut best: Option<(u128, f64, f64)> = None;
    for t in candidate_thresholds(&all) {
        let rejected_bona = bona.partition_point(|&s| s < t) as u128;
        let accepted_attack = na - attack.partition_point(|&s| s < t) as u128;
        // |FAR - FRR| scaled by na * nb, exact in integers.
        let gap = (accepted_attack * nb).abs_diff(rejected_bona * na);
        if best.map_or(true, |(g, _, _)| gap < g) {
            let rate =
                (accepted_attack as f64 / na as f64 + rejected_bona as f64 / nb as f64) / 2.0;
            best = Some((gap, t, rate));
        }
    }
    let (_, threshold, rate) = best.expect("at least one candidate");
    Ok((rate, threshold))
}

/// Mann-Whitney AUC from mid-ranks, bona fide as the positive class.
pub fn auc(scores: &[LabeledScore]) -> Result<f64> {
    let (bona, attack) = split(scores)?;
    let mut all: Vec<(f64, bool)> = scores
        .iter()
        .map(|s| (s.score, s.label == Label::Bonafide))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Twice the positive rank sum, so mid-ranks stay integral.
    let mut twice_rank_sum: u128 = 0;
    let mut start = 0;
    while start < all.len() {
        let mut end = start + 1;
        while end < all.len() && all[end].0 == all[start].0 {
            end += 1;
        }
        let ties = (end - start) as u128;
        let twice_mid_rank = 2 * start as u128 + ties + 1;
        let positives = all[start..end].iter().filter(|(_, p)| *p).count() as u128;
        twice_rank_sum += positives * twice_mid_rank;
        start = end;
    }
    let np = bona.len() as u128;
    let nn = attack.len() as u128;
    let twice_u = twice_rank_sum - np * (np + 1);
    Ok(twice_u as f64 / (2 * np * nn) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdOrigin {
    DevEer,
    TestEer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub bonafide: usize,
    pub attack: usize,
    pub by_pais: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub threshold: f64,
    pub threshold_origin: ThresholdOrigin,
    pub apcer_by_pais: BTreeMap<String, f64>,
    pub apcer: f64,
    pub bpcer: f64,
    pub acer: f64,
    pub far: f64,
    pub frr: f64,
    pub eer: f64,
    pub eer_threshold: f64,
    /// Half total error rate keyed by threshold (shortest decimal form).
    pub hter_at: BTreeMap<String, f64>,
    pub auc: f64,
    pub counts: ClassCounts,
}

/// FAR and FRR at a threshold, pooling every PAIS.
pub fn far_frr(scores: &[LabeledScore], threshold: f64) -> Result<(f64, f64)> {
    let (bona, attack) = split(scores)?;
    let far = attack.iter().filter(|&&s| s >= threshold).count() as f64 / attack.len() as f64;
    let frr = bona.iter().filter(|&&s| s < threshold).count() as f64 / bona.len() as f64;
    Ok((far, frr))
}

pub fn evaluate(
    scores: &[LabeledScore],
    dev_scores: Option<&[LabeledScore]>,
) -> Result<EvalReport> {
    if scores
        .iter()
        .any(|s| s.label == Label::Attack && s.pais.is_none())
    {
        return Err(OckrError::InvalidRow("attack score without PAIS".into()));
    }
    let (eer_rate, eer_threshold) = eer(scores)?;
    let (threshold, threshold_origin) = match dev_scores {
        Some(dev) => (eer(dev)?.1, ThresholdOrigin::DevEer),
        None => (eer_threshold, ThresholdOrigin::TestEer),
    };
    let rates = apcer_bpcer(scores, threshold)?;
    let (far, frr) = far_frr(scores, threshold)?;
    let mut hter_at = BTreeMap::new();
    hter_at.insert(threshold.to_string(), (far + frr) / 2.0);
    let (far_e, frr_e) = far_frr(scores, eer_threshold)?;
    hter_at.insert(eer_threshold.to_string(), (far_e + frr_e) / 2.0);

    let mut by_pais = BTreeMap::new();
    for s in scores.iter().filter(|s| s.label == Label::Attack) {
        *by_pais
            .entry(s.pais.clone().unwrap_or_default())
            .or_insert(0) += 1;
    }
    let counts = ClassCounts {
        bonafide: scores.iter().filter(|s| s.label == Label::Bonafide).count(),
        attack: scores.iter().filter(|s| s.label == Label::Attack).count(),
        by_pais,
    };
    Ok(EvalReport {
        threshold,
        threshold_origin,
        acer: rates.acer(),
        apcer: rates.apcer,
        bpcer: rates.bpcer,
        apcer_by_pais: rates.apcer_by_pais,
        far,
        frr,
        eer: eer_rate,
        eer_threshold,
        hter_at,
        auc: auc(scores)?,
        counts,
    })
}
