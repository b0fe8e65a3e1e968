mod support;

use ndarray::{Array2, ArrayView2};
use ockr_core::kernels::{
    build_fused_gram, fit_bandwidth, fused_cross_kernel_counted, FusedKernelConfig,
};
use ockr_core::models::train_on_rows;
use ockr_core::regression::{
    fisher_diagnostics, lasso_objective, solve_dense, solve_lars_path, LarsPath, PathEvent,
};
use ockr_core::scoring::{calibration_from_scores, score_frame, score_frame_counted};
use ockr_core::{FeaturePack, FeatureRow, RowMeta, TrainOptions, ViewId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::oracles::*;

fn to_array(rows: &[Vec<f64>]) -> Array2<f64> {
    let dim = rows[0].len();
    Array2::from_shape_vec((rows.len(), dim), rows.concat()).unwrap()
}

fn to_mat(a: ArrayView2<'_, f64>) -> Mat {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// Random multi-view rows and their fused Gram.
fn random_instance(
    rng: &mut ChaCha8Rng,
    n: usize,
) -> (Vec<Vec<Vec<f64>>>, FusedKernelConfig, Array2<f64>) {
    let n_views = rng.gen_range(1..=4);
    let views: Vec<Vec<Vec<f64>>> = (0..n_views)
        .map(|_| {
            let dim = rng.gen_range(3..=10);
            unit_rows(rng, n, dim)
        })
        .collect();
    let arrays: Vec<Array2<f64>> = views.iter().map(|v| to_array(v)).collect();
    let blocks: Vec<ArrayView2<'_, f64>> = arrays.iter().map(|a| a.view()).collect();
    let ids = (0..n_views)
        .map(|v| ViewId::new(format!("R{v}"), "N1"))
        .collect();
    let config = FusedKernelConfig::fit(ids, &blocks, 0.0).unwrap();
    let gram = build_fused_gram(&blocks, &config).unwrap().values;
    (views, config, gram)
}

#[test]
fn bandwidth_matches_pairwise_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for n in [2, 3, 7, 30] {
        let rows = unit_rows(&mut rng, n, 5);
        let theta = fit_bandwidth(to_array(&rows).view()).unwrap().theta;
        let want = theta_bruteforce(&rows);
        assert!((theta - want).abs() <= 1e-12 * want, "{theta} vs {want}");
    }
}

#[test]
fn fused_gram_matches_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10 {
        let n = rng.gen_range(2..20);
        let (views, config, gram) = random_instance(&mut rng, n);
        let thetas: Vec<f64> = config.params.iter().map(|p| p.theta).collect();
        let want = fused_gram_loop(&views, &thetas);
        for i in 0..n {
            assert_eq!(gram[[i, i]], 1.0);
            for j in 0..n {
                assert!((gram[[i, j]] - want[i][j]).abs() < 1e-14);
                assert_eq!(gram[[i, j]], gram[[j, i]]);
            }
        }
    }
}

#[test]
fn dense_solve_matches_elimination_and_zeroes_within_scatter() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..30 {
        let n = rng.gen_range(3..=25);
        let (_, _, gram) = random_instance(&mut rng, n);
        let sol = solve_dense(gram.view(), 0.0).unwrap();
        let k = to_mat(gram.view());
        let responses = mat_vec(&k, &sol.alpha);
        assert!(responses.iter().all(|y| (y - 1.0).abs() < 1e-6));
        let reference = gauss_solve(&k, &vec![1.0; n]);
        let scale = reference.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for (a, b) in sol.alpha.iter().zip(&reference) {
            assert!((a - b).abs() <= 1e-9 * scale, "{a} vs {b}");
        }
        let f = fisher_diagnostics(gram.view(), &sol.alpha).unwrap();
        assert!(f.s_w.abs() <= 1e-10, "s_w {}", f.s_w);
        assert!((f.s_b - 1.0).abs() <= 1e-8, "s_b {}", f.s_b);
    }
}

#[test]
fn lars_path_points_are_lasso_optimal() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..25 {
        let n = rng.gen_range(2..=10);
        let (_, _, gram) = random_instance(&mut rng, n);
        let k = to_mat(gram.view());
        let mut last = None;
        for point in LarsPath::new(gram.view()).unwrap() {
            let point = point.unwrap();
            let v = kkt_violation(&k, &point.alpha, point.delta);
            assert!(v < 1e-8, "kkt violation {v:e} at {:?}", point.event);
            if point.delta > 1e-6 {
                let cd = lasso_cd(&k, point.delta, 1e-12, 200_000);
                let ours = lasso_objective(gram.view(), &point.alpha, point.delta);
                assert!(ours <= lasso_objective(gram.view(), &cd, point.delta) + 1e-6);
            }
            last = Some(point);
        }
        let last = last.unwrap();
        assert_eq!(last.event, PathEvent::End);
        let dense = solve_dense(gram.view(), 0.0).unwrap();
        let gap = last
            .alpha
            .iter()
            .zip(&dense.alpha)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(gap < 1e-6, "endpoint gap {gap}");
    }
}

#[test]
fn budgeted_solution_respects_target() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (_, _, gram) = random_instance(&mut rng, 30);
    for target in 1..=8 {
        let s = solve_lars_path(gram.view(), target).unwrap();
        assert!(s.nnz <= target);
        assert_eq!(s.nnz, s.coefficients.len());
        let k = to_mat(gram.view());
        assert!(kkt_violation(&k, &s.dense_alpha(30), s.delta) < 1e-8);
    }
}

#[test]
fn scoring_matches_triple_loop_and_counts_evaluations() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let n_views = 3;
    let n = 12;
    let views: Vec<Vec<Vec<f64>>> = (0..n_views).map(|_| unit_rows(&mut rng, n, 6)).collect();
    let rows: Vec<(ViewId, Vec<FeatureRow>)> = views
        .iter()
        .enumerate()
        .map(|(v, r)| {
            let rows = r
                .iter()
                .enumerate()
                .map(|(i, x)| FeatureRow {
                    meta: RowMeta::bonafide("c", "v", i as u64),
                    vector: x.clone(),
                })
                .collect();
            (ViewId::new(format!("R{v}"), "N1"), rows)
        })
        .collect();
    let pack = FeaturePack::from_view_rows(rows).unwrap();
    let opts = TrainOptions {
        target_nnz: Some(4),
        ..Default::default()
    };
    let model = train_on_rows(&pack, "c", &opts).unwrap();
    let thetas: Vec<f64> = model.config.params.iter().map(|p| p.theta).collect();
    let support: Vec<Vec<Vec<f64>>> = model
        .support
        .iter()
        .map(|s| s.rows().into_iter().map(|r| r.to_vec()).collect())
        .collect();
    for _ in 0..5 {
        let z: Vec<Vec<f64>> = (0..n_views)
            .map(|_| unit_rows(&mut rng, 1, 6).remove(0))
            .collect();
        let zs: Vec<&[f64]> = z.iter().map(|v| v.as_slice()).collect();
        let (s, evals) = score_frame_counted(&model, &zs).unwrap();
        let want = score_loop(&model.alpha, &support, &thetas, &z);
        assert!((s - want).abs() < 1e-13);
        assert_eq!(evals, (model.n_support() * n_views) as u64);
    }
    // Training rows score to their fitted responses.
    let blocks: Vec<_> = pack.views().iter().map(|b| b.as_array()).collect();
    let gram = build_fused_gram(&blocks, &model.config).unwrap();
    for i in 0..n {
        let fitted: f64 = model
            .support_rows
            .iter()
            .zip(&model.alpha)
            .map(|(&j, a)| a * gram.values[[i, j]])
            .sum();
        let s = score_frame(&model, &pack.frame(i, model.views()).unwrap()).unwrap();
        assert!((s - fitted).abs() < 1e-13);
    }
}

#[test]
fn cross_kernel_evaluation_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (views, config, _) = random_instance(&mut rng, 9);
    let arrays: Vec<Array2<f64>> = views.iter().map(|v| to_array(v)).collect();
    let blocks: Vec<ArrayView2<'_, f64>> = arrays.iter().map(|a| a.view()).collect();
    let z: Vec<&[f64]> = views.iter().map(|v| v[0].as_slice()).collect();
    let (k, evals) = fused_cross_kernel_counted(&z, &blocks, &config).unwrap();
    assert_eq!(evals, (9 * views.len()) as u64);
    assert!((k[0] - 1.0).abs() < 1e-15);
}

#[test]
fn calibration_matches_two_pass() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for n in [2, 5, 100] {
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let fit = calibration_from_scores(&x).unwrap();
        let (m, s) = mean_std_two_pass(&x);
        assert!((fit.calibration.mu - m).abs() < 1e-12);
        assert!((fit.calibration.sigma - s).abs() < 1e-12);
    }
}
