use std::fs;

use ockr_core::featurestore::{read_pack, write_pack};
use ockr_core::models::{
    bundle_from_str, bundle_to_string, load_bundle, row_key, save_bundle, train_bundle,
    train_client,
};
use ockr_core::pipeline::score_pack;
use ockr_core::scoring::{score_frame, score_frame_counted};
use ockr_core::synth::{generate, SynthSpec};
use ockr_core::{
    FeaturePack, FeatureRow, Label, ModelBundle, OckrError, RowMeta, TrainOptions, TrainingMode,
    ViewId,
};

fn spec(clients: usize) -> SynthSpec {
    let mut s = SynthSpec {
        clients,
        frames_per_video: 3,
        ..Default::default()
    };
    s.views.truncate(3);
    s
}

#[test]
fn pack_round_trip_is_bit_exact() {
    let packs = generate(&spec(3)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_pack(&packs.test, dir.path()).unwrap();
    let back = read_pack(dir.path()).unwrap();
    assert_eq!(back, packs.test);
    assert_eq!(back.digest(), packs.test.digest());
    // Rewriting what was read reproduces every file byte for byte.
    let again = tempfile::tempdir().unwrap();
    write_pack(&back, again.path()).unwrap();
    let mut names: Vec<_> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert_eq!(names.len(), 9);
    for name in names {
        assert_eq!(
            fs::read(dir.path().join(&name)).unwrap(),
            fs::read(again.path().join(&name)).unwrap()
        );
    }
}

#[test]
fn truncated_block_on_disk_is_reported() {
    let packs = generate(&spec(1)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_pack(&packs.enroll, dir.path()).unwrap();
    let block = dir.path().join("R1_N1.f32");
    let bytes = fs::read(&block).unwrap();
    fs::write(&block, &bytes[..bytes.len() - 4]).unwrap();
    assert!(matches!(
        read_pack(dir.path()),
        Err(OckrError::TruncatedBlock { .. })
    ));
}

#[test]
fn bundle_round_trip_scores_identically() {
    let packs = generate(&spec(3)).unwrap();
    let bundle = train_bundle(
        &packs.enroll,
        TrainingMode::ClientSpecific,
        &TrainOptions::default(),
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ockrmodel.json");
    save_bundle(&bundle, &path).unwrap();
    let loaded = load_bundle(&path).unwrap();
    assert_eq!(loaded, bundle);
    let before = score_pack(&bundle, &packs.test).unwrap();
    let after = score_pack(&loaded, &packs.test).unwrap();
    for (a, b) in before.iter().zip(&after) {
        assert_eq!(a.raw.to_bits(), b.raw.to_bits());
        for (x, y) in a.frames.iter().zip(&b.frames) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
    assert_eq!(
        bundle_to_string(&loaded).unwrap(),
        fs::read_to_string(&path).unwrap()
    );
}

#[test]
fn bundle_of_forty_clients() {
    let packs = generate(&spec(40)).unwrap();
    let bundle = train_bundle(
        &packs.enroll,
        TrainingMode::ClientSpecific,
        &TrainOptions::default(),
    )
    .unwrap();
    let back = bundle_from_str(&bundle_to_string(&bundle).unwrap()).unwrap();
    assert_eq!(back.len(), 40);
    for c in packs.enroll.clients() {
        assert_eq!(back.get(&c).unwrap().client_id, c);
    }
}

#[test]
fn client_isolation() {
    let a = generate(&spec(3)).unwrap();
    let b = generate(&SynthSpec {
        seed: 77,
        ..spec(3)
    })
    .unwrap();
    // c000 rows from the first run, everyone else from the second.
    let mut views = Vec::new();
    for id in a.enroll.view_ids() {
        let mut rows = Vec::new();
        for (pack, keep) in [(&a.enroll, true), (&b.enroll, false)] {
            let block = pack.view(&id).unwrap();
            for (i, m) in pack.meta().iter().enumerate() {
                if (m.client == "c000") == keep {
                    rows.push(FeatureRow {
                        meta: m.clone(),
                        vector: block.row(i).to_vec(),
                    });
                }
            }
        }
        views.push((id, rows));
    }
    let mixed = FeaturePack::from_view_rows(views).unwrap();
    let opts = TrainOptions::default();
    let m1 = train_client(&a.enroll, "c000", &opts).unwrap();
    let m2 = train_client(&mixed, "c000", &opts).unwrap();
    assert_eq!(m1, m2);
    assert_ne!(
        train_client(&a.enroll, "c001", &opts).unwrap().alpha,
        train_client(&mixed, "c001", &opts).unwrap().alpha
    );
}

#[test]
fn training_uses_only_bona_fide_rows() {
    let packs = generate(&spec(2)).unwrap();
    let bundle = train_bundle(
        &packs.enroll,
        TrainingMode::ClientIndependent,
        &TrainOptions::default(),
    )
    .unwrap();
    let model = bundle.get(ockr_core::GLOBAL_CLIENT).unwrap();
    let bona: Vec<String> = packs
        .enroll
        .meta()
        .iter()
        .filter(|m| m.label == Label::Bonafide)
        .map(row_key)
        .collect();
    assert_eq!(model.provenance.training_rows, bona);
    // A dev pack holds attacks, so training on it is refused.
    assert!(matches!(
        train_client(&packs.dev, "c000", &TrainOptions::default()),
        Err(OckrError::Protocol(_))
    ));
}

#[test]
fn five_frames_with_identical_views_interpolate() {
    let vecs = [
        [1.0, 0.2, 0.0],
        [0.3, 1.0, 0.1],
        [0.0, 0.4, 1.0],
        [0.7, 0.7, 0.2],
        [0.1, 0.6, 0.6],
    ];
    let rows: Vec<FeatureRow> = vecs
        .iter()
        .enumerate()
        .map(|(f, v)| FeatureRow {
            meta: RowMeta::bonafide("c", "v", f as u64),
            vector: v.to_vec(),
        })
        .collect();
    let views = vec![
        (ViewId::new("R1", "N1"), rows.clone()),
        (ViewId::new("R2", "N1"), rows),
    ];
    let pack = FeaturePack::from_view_rows(views).unwrap();
    let opts = TrainOptions {
        target_nnz: Some(5),
        ..Default::default()
    };
    let model = train_client(&pack, "c", &opts).unwrap();
    assert_eq!(model.n_support(), 5);
    for i in 0..5 {
        let s = score_frame(&model, &pack.frame(i, model.views()).unwrap()).unwrap();
        assert!((s - 1.0).abs() < 1e-6, "{s}");
    }
}

#[test]
fn two_support_rows_cost_two_evaluations_per_view() {
    let mut s = SynthSpec {
        clients: 1,
        frames_per_video: 13,
        enroll_videos: 2,
        ..Default::default()
    };
    s.views.truncate(4);
    let packs = generate(&s).unwrap();
    assert_eq!(packs.enroll.len(), 26);
    let opts = TrainOptions {
        target_nnz: Some(2),
        ..Default::default()
    };
    let model = train_client(&packs.enroll, "c000", &opts).unwrap();
    assert_eq!(model.n_support(), 2);
    let z = packs.test.frame(0, model.views()).unwrap();
    assert_eq!(score_frame_counted(&model, &z).unwrap().1, 2 * 4);
}

#[test]
fn empty_bundle_reports_unknown_client() {
    let packs = generate(&spec(1)).unwrap();
    let err = score_pack(&ModelBundle::default(), &packs.test).unwrap_err();
    assert!(matches!(err, OckrError::UnknownClient(ref c) if c == "c000"));
}
