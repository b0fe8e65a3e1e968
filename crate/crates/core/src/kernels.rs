//! Gaussian kernels per view and their uniform-average fusion.
//!
//! Each view gets its own bandwidth `theta`, set to the reciprocal of the
//! mean Euclidean distance over all distinct pairs of bona fide training
//! rows of that view. The fused kernel is the plain mean of the per-view
//! kernels, so its diagonal is exactly one.

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{OckrError, Result};
use crate::featurestore::ViewId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    /// Gaussian bandwidth in `exp(-theta * ||a - b||^2)`.
    pub theta: f64,
}

/// Views, per-view bandwidths and the solve-time ridge jitter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedKernelConfig {
    pub views: Vec<ViewId>,
    pub params: Vec<KernelParams>,
    /// Requested ridge for the dense solve; never folded into a stored Gram.
    pub jitter: f64,
}

impl FusedKernelConfig {
    /// Fits one bandwidth per view from that view's training rows.
    pub fn fit(views: Vec<ViewId>, rows: &[ArrayView2<'_, f64>], jitter: f64) -> Result<Self> {
        if views.is_empty() || views.len() != rows.len() {
            return Err(OckrError::Invalid(format!(
                "{} view ids for {} row blocks",
                views.len(),
                rows.len()
            )));
        }
        let params = rows
            .iter()
            .map(|r| fit_bandwidth(*r))
            .collect::<Result<Vec<_>>>()?;
        Ok(FusedKernelConfig {
            views,
            params,
            jitter,
        })
    }

    pub fn n_views(&self) -> usize {
        self.views.len()
    }
}

/// Symmetric kernel matrix over a set of training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    pub values: Array2<f64>,
    pub row_keys: Vec<String>,
}

impl KernelMatrix {
    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn with_row_keys(mut self, keys: Vec<String>) -> Self {
        self.row_keys = keys;
        self
    }
}

#[inline]
pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `theta = 1 / mean_{i<j} ||x_i - x_j||`.
pub fn fit_bandwidth(rows: ArrayView2<'_, f64>) -> Result<KernelParams> {
    let n = rows.nrows();
    if n < 2 {
        return Err(OckrError::TooFewRows {
            needed: 2,
            found: n,
        });
    }
    let mut total = 0.0;
    for i in 0..n {
        let a = rows.row(i);
        let a = a.as_slice().expect("standard layout");
        for j in i + 1..n {
            let b = rows.row(j);
            total += squared_distance(a, b.as_slice().expect("standard layout")).sqrt();
        }
    }
    let pairs = (n * (n - 1) / 2) as f64;
    let mean = total / pairs;
    if !(mean > 0.0) {
        return Err(OckrError::DegenerateBandwidth);
    }
    let theta = 1.0 / mean;
    if !theta.is_finite() {
        return Err(OckrError::DegenerateBandwidth);
    }
    Ok(KernelParams { theta })
}

pub fn gaussian_kernel(a: &[f64], b: &[f64], theta: f64) -> Result<f64> {
    if a.len() != b.len() {
        return Err(OckrError::DimMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok((-theta * squared_distance(a, b)).exp())
}

/// Single-view Gram matrix; upper triangle computed, lower mirrored.
pub fn build_gram(rows: ArrayView2<'_, f64>, theta: f64) -> Array2<f64> {
    fused_gram_unchecked(&[rows], &[KernelParams { theta }])
}

fn fused_gram_unchecked(views: &[ArrayView2<'_, f64>], params: &[KernelParams]) -> Array2<f64> {
    let n = views[0].nrows();
    let count = views.len() as f64;
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (i..n)
                .map(|j| {
                    if i == j {
                        return 1.0;
                    }
                    let mut sum = 0.0;
                    for (rows, p) in views.iter().zip(params) {
                        let a = rows.row(i);
                        let b = rows.row(j);
                        let d = squared_distance(
                            a.as_slice().expect("standard layout"),
                            b.as_slice().expect("standard layout"),
                        );
                        sum += (-p.theta * d).exp();
                    }
                    sum / count
                })
                .collect()
        })
        .collect();
    let mut k = Array2::<f64>::zeros((n, n));
    for (i, row) in upper.into_iter().enumerate() {
        for (off, v) in row.into_iter().enumerate() {
            let j = i + off;
            k[[i, j]] = v;
            k[[j, i]] = v;
        }
    }
    k
}

/// Mean over views of the per-view Gaussian Gram matrices.
pub fn build_fused_gram(
    views: &[ArrayView2<'_, f64>],
    config: &FusedKernelConfig,
) -> Result<KernelMatrix> {
    if views.is_empty() || views.len() != config.n_views() {
        return Err(OckrError::Invalid(format!(
            "config has {} views, got {} row blocks",
            config.n_views(),
            views.len()
        )));
    }
    let n = views[0].nrows();
    if let Some(bad) = views.iter().find(|v| v.nrows() != n) {
        return Err(OckrError::Invalid(format!(
            "view row-count mismatch: {} vs {}",
            n,
            bad.nrows()
        )));
    }
    if n < 2 {
        return Err(OckrError::TooFewRows {
            needed: 2,
            found: n,
        });
    }
    Ok(KernelMatrix {
        values: fused_gram_unchecked(views, &config.params),
        row_keys: Vec::new(),
    })
}

/// Fused kernel between one test frame and every support row.
///
/// `z` holds the frame's vector for each config view, in config order.
/// Returns the kernel row together with the number of scalar kernel
/// evaluations performed (always `support rows * views`).
pub fn fused_cross_kernel_counted(
    z: &[&[f64]],
    support: &[ArrayView2<'_, f64>],
    config: &FusedKernelConfig,
) -> Result<(Vec<f64>, u64)> {
    if z.len() != config.n_views() {
        return Err(OckrError::MissingView(format!(
            "frame has {} views, config expects {}",
            z.len(),
            config.n_views()
        )));
    }
    if support.len() != config.n_views() {
        return Err(OckrError::Invalid(
            "support blocks do not match config views".into(),
        ));
    }
    let m = support[0].nrows();
    if m == 0 {
        return Err(OckrError::TooFewRows {
            needed: 1,
            found: 0,
        });
    }
    let count = config.n_views() as f64;
    let mut evals = 0u64;
    let mut out = Vec::with_capacity(m);
    for i in 0..m {
        let mut sum = 0.0;
        for ((zv, rows), p) in z.iter().zip(support).zip(&config.params) {
            let x = rows.row(i);
            sum += gaussian_kernel(zv, x.as_slice().expect("standard layout"), p.theta)?;
            evals += 1;
        }
        out.push(sum / count);
    }
    Ok((out, evals))
}

pub fn fused_cross_kernel(
    z: &[&[f64]],
    support: &[ArrayView2<'_, f64>],
    config: &FusedKernelConfig,
) -> Result<Vec<f64>> {
    fused_cross_kernel_counted(z, support, config).map(|(k, _)| k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn bandwidth_single_pair() {
        let rows = array![[0.0, 0.0], [2.0, 0.0]];
        assert_eq!(fit_bandwidth(rows.view()).unwrap().theta, 0.5);
    }

    #[test]
    fn bandwidth_equilateral() {
        let h = 3f64.sqrt() / 2.0;
        let rows = array![[0.0, 0.0], [1.0, 0.0], [0.5, h]];
        assert!((fit_bandwidth(rows.view()).unwrap().theta - 1.0).abs() < 1e-15);
    }

    #[test]
    fn bandwidth_errors() {
        assert!(matches!(
            fit_bandwidth(array![[1.0, 0.0]].view()),
            Err(OckrError::TooFewRows { .. })
        ));
        assert!(matches!(
            fit_bandwidth(array![[1.0, 0.0], [1.0, 0.0]].view()),
            Err(OckrError::DegenerateBandwidth)
        ));
    }

    #[test]
    fn gaussian_values() {
        assert_eq!(gaussian_kernel(&[0.3, 0.4], &[0.3, 0.4], 7.0).unwrap(), 1.0);
        let v = gaussian_kernel(&[1.0, 0.0], &[0.0, 0.0], std::f64::consts::LN_2).unwrap();
        assert!((v - 0.5).abs() < 1e-15);
        assert!(gaussian_kernel(&[1.0], &[1.0, 2.0], 1.0).is_err());
    }

    #[test]
    fn fused_gram_of_two_views_is_arithmetic_mean() {
        // theta chosen so that exp(-theta * 1) hits 0.2 and 0.6 respectively.
        let rows = array![[0.0, 0.0], [1.0, 0.0]];
        let config = FusedKernelConfig {
            views: vec![ViewId::new("R1", "N1"), ViewId::new("R1", "N2")],
            params: vec![
                KernelParams {
                    theta: -(0.2f64).ln(),
                },
                KernelParams {
                    theta: -(0.6f64).ln(),
                },
            ],
            jitter: 0.0,
        };
        let k = build_fused_gram(&[rows.view(), rows.view()], &config).unwrap();
        assert!((k.values[[0, 1]] - 0.4).abs() < 1e-15);
        assert_eq!(k.values[[0, 1]], k.values[[1, 0]]);
        assert_eq!(k.values[[0, 0]], 1.0);
    }

    #[test]
    fn identical_views_fuse_to_single_view() {
        let rows = array![[1.0, 0.0], [0.6, 0.8], [0.0, 1.0]];
        let theta = fit_bandwidth(rows.view()).unwrap();
        let single = build_gram(rows.view(), theta.theta);
        let config = FusedKernelConfig {
            views: vec![
                ViewId::new("R1", "N1"),
                ViewId::new("R2", "N1"),
                ViewId::new("R3", "N1"),
            ],
            params: vec![theta; 3],
            jitter: 0.0,
        };
        let fused = build_fused_gram(&[rows.view(), rows.view(), rows.view()], &config).unwrap();
        for (a, b) in fused.values.iter().zip(single.iter()) {
            assert!((a - b).abs() <= 1e-15);
        }
    }

    #[test]
    fn row_count_mismatch_rejected() {
        let a = array![[1.0, 0.0], [0.0, 1.0]];
        let b = array![[1.0, 0.0], [0.0, 1.0], [0.6, 0.8]];
        let config = FusedKernelConfig {
            views: vec![ViewId::new("R1", "N1"), ViewId::new("R2", "N1")],
            params: vec![KernelParams { theta: 1.0 }; 2],
            jitter: 0.0,
        };
        assert!(build_fused_gram(&[a.view(), b.view()], &config).is_err());
    }

    #[test]
    fn cross_kernel_degenerate_cases() {
        let support = array![[1.0, 0.0], [0.0, 1.0]];
        let config = FusedKernelConfig {
            views: vec![ViewId::new("R1", "N1")],
            params: vec![KernelParams { theta: 0.7 }],
            jitter: 0.0,
        };
        let z: &[f64] = &[0.0, 1.0];
        let (k, evals) = fused_cross_kernel_counted(&[z], &[support.view()], &config).unwrap();
        assert_eq!(k[1], 1.0);
        assert_eq!(k[0], gaussian_kernel(z, &[1.0, 0.0], 0.7).unwrap());
        assert_eq!(evals, 2);
        assert!(matches!(
            fused_cross_kernel(&[], &[support.view()], &config),
            Err(OckrError::MissingView(_))
        ));
    }
}
