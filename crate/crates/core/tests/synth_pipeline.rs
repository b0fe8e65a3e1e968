use std::collections::BTreeSet;

use ockr_core::metrics::auc;
use ockr_core::models::train_bundle;
use ockr_core::pipeline::{calibrate_bundle, labeled_scores, score_pack, sparsity_sweep};
use ockr_core::synth::generate;
use ockr_core::{ScoreLevel, SynthSpec, ThresholdMode, TrainOptions, TrainingMode};

#[test]
fn same_seed_same_bytes() {
    let spec = SynthSpec::default();
    let a = generate(&spec).unwrap();
    let b = generate(&spec).unwrap();
    assert_eq!(a.enroll.digest(), b.enroll.digest());
    assert_eq!(a.test.digest(), b.test.digest());
    let c = generate(&SynthSpec {
        seed: spec.seed + 1,
        ..spec
    })
    .unwrap();
    assert_ne!(a.test.digest(), c.test.digest());
}

#[test]
fn splits_share_no_video() {
    let p = generate(&SynthSpec::default()).unwrap();
    let keys = |pack: &ockr_core::FeaturePack| -> BTreeSet<(String, String)> {
        pack.meta()
            .iter()
            .map(|m| (m.client.clone(), m.video.clone()))
            .collect()
    };
    let (e, d, t) = (keys(&p.enroll), keys(&p.dev), keys(&p.test));
    assert!(e.is_disjoint(&d) && e.is_disjoint(&t) && d.is_disjoint(&t));
}

#[test]
fn zero_shift_gives_chance_auc() {
    let mut spec = SynthSpec {
        clients: 2,
        frames_per_video: 10,
        videos_per_client: 50,
        attack_videos_per_pais: 50,
        attack_shift: 0.0,
        ..Default::default()
    };
    spec.pais.truncate(1);
    let p = generate(&spec).unwrap();
    let bundle = train_bundle(
        &p.enroll,
        TrainingMode::ClientSpecific,
        &TrainOptions::default(),
    )
    .unwrap();
    let records = score_pack(&bundle, &p.test).unwrap();
    let frames = labeled_scores(&records, ScoreLevel::Frame).unwrap();
    assert_eq!(frames.len(), 2000);
    let a = auc(&frames).unwrap();
    assert!((a - 0.5).abs() < 0.1, "auc {a}");
}

#[test]
fn calibrated_pipeline_separates_default_attacks() {
    let p = generate(&SynthSpec::default()).unwrap();
    let mut bundle = train_bundle(
        &p.enroll,
        TrainingMode::ClientSpecific,
        &TrainOptions::default(),
    )
    .unwrap();
    calibrate_bundle(&mut bundle, &p.dev, ThresholdMode::DevEer).unwrap();
    let records = score_pack(&bundle, &p.test).unwrap();
    assert!(records.iter().all(|r| r.prob.is_some()));
    let raw = auc(&labeled_scores(&records, ScoreLevel::VideoRaw).unwrap()).unwrap();
    assert!(raw > 0.8, "video auc {raw}");
}

#[test]
fn sweep_speedup_tracks_support_size() {
    let mut spec = SynthSpec::default();
    spec.views.truncate(2);
    let p = generate(&spec).unwrap();
    let rows = sparsity_sweep(
        &p.enroll,
        Some(&p.dev),
        &p.test,
        TrainingMode::ClientSpecific,
        &TrainOptions::default(),
        &[1, 4],
    )
    .unwrap();
    assert_eq!(rows.len(), 3);
    assert!(rows[0].target_nnz.is_none());
    assert_eq!(rows[0].speedup, 1.0);
    let dense = rows[0].kernel_evals_per_frame;
    for r in &rows[1..] {
        let want = dense / r.kernel_evals_per_frame;
        assert!((r.speedup - want).abs() < 1e-12);
        assert!(r.mean_nnz <= r.target_nnz.unwrap() as f64);
    }
}
