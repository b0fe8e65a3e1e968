//! Dense Cholesky and Householder QR factorisations.

use ndarray::{Array2, ArrayView2};

use crate::error::{OckrError, Result};

/// Smallest escalated jitter, relative to `trace / n`.
pub const JITTER_START: f64 = 1e-10;
/// Largest escalated jitter, relative to `trace / n`.
pub const JITTER_MAX: f64 = 1e-4;

/// Lower-triangular Cholesky factor `L` with `A + jitter I = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: Array2<f64>,
    jitter: f64,
}

impl Cholesky {
    /// Factors `a + jitter I`, reading only the lower triangle.
    /// Returns `None` on a non-positive or non-finite pivot.
    pub fn factor(a: ArrayView2<'_, f64>, jitter: f64) -> Option<Self> {
        let n = a.nrows();
        debug_assert_eq!(n, a.ncols());
        let mut l = Array2::<f64>::zeros((n, n));
        for j in 0..n {
            let mut d = a[[j, j]] + jitter;
            for k in 0..j {
                d -= l[[j, k]] * l[[j, k]];
            }
            if !(d > 0.0) || !d.is_finite() {
                return None;
            }
            let d = d.sqrt();
            l[[j, j]] = d;
            for i in j + 1..n {
                let mut s = a[[i, j]];
                for k in 0..j {
                    s -= l[[i, k]] * l[[j, k]];
                }
                l[[i, j]] = s / d;
            }
        }
        Some(Cholesky { l, jitter })
    }

    /// Factors with the escalation policy: try `requested` first, then
    /// `max(requested, 1e-10 tr/n)` growing tenfold up to `1e-4 tr/n`.
    pub fn factor_escalating(a: ArrayView2<'_, f64>, requested: f64) -> Result<Self> {
        if let Some(c) = Self::factor(a, requested) {
            return Ok(c);
        }
        let n = a.nrows().max(1) as f64;
        let scale = (a.diag().sum() / n).abs().max(f64::MIN_POSITIVE);
        let ceiling = JITTER_MAX * scale;
        let mut jitter = requested.max(JITTER_START * scale);
        while jitter <= ceiling * (1.0 + 1e-12) {
            if let Some(c) = Self::factor(a, jitter) {
                return Ok(c);
            }
            jitter *= 10.0;
        }
        Err(OckrError::FactorisationFailed { jitter: ceiling })
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    /// Solves `(A + jitter I) x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim();
        assert_eq!(b.len(), n, "rhs length");
        let l = &self.l;
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= l[[i, k]] * y[k];
            }
            y[i] = s / l[[i, i]];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= l[[k, i]] * y[k];
            }
            y[i] = s / l[[i, i]];
        }
        y
    }
}

/// Householder QR of a tall `n x m` matrix (`n >= m`).
#[derive(Debug, Clone)]
pub struct Qr {
    /// Householder vectors, one per column, each of length `n - j`.
    reflectors: Vec<Vec<f64>>,
    /// Upper-triangular `m x m` factor.
    r: Array2<f64>,
}

impl Qr {
    pub fn new(a: ArrayView2<'_, f64>) -> Self {
        let (n, m) = a.dim();
        assert!(n >= m, "QR needs at least as many rows as columns");
        let mut w = a.to_owned();
        let mut reflectors = Vec::with_capacity(m);
        for j in 0..m {
            let mut v: Vec<f64> = (j..n).map(|i| w[[i, j]]).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                v[0] += if v[0] >= 0.0 { norm } else { -norm };
                let vnorm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                for x in &mut v {
                    *x /= vnorm;
                }
                for c in j..m {
                    let dot: f64 = (j..n).map(|i| v[i - j] * w[[i, c]]).sum();
                    for i in j..n {
                        w[[i, c]] -= 2.0 * v[i - j] * dot;
                    }
                }
            }
            reflectors.push(v);
        }
        let mut r = Array2::<f64>::zeros((m, m));
        for i in 0..m {
            for c in i..m {
                r[[i, c]] = w[[i, c]];
            }
        }
        Qr { reflectors, r }
    }

    /// Smallest `|r_ii|` relative to the largest; zero for a rank-deficient
    /// matrix.
    pub fn diag_ratio(&self) -> f64 {
        let d: Vec<f64> = self.r.diag().iter().map(|x| x.abs()).collect();
        let hi = d.iter().cloned().fold(0.0, f64::max);
        let lo = d.iter().cloned().fold(f64::INFINITY, f64::min);
        if hi > 0.0 {
            lo / hi
        } else {
            0.0
        }
    }

    /// `Qᵀ b`, truncated to the first `m` entries.
    pub fn qt_mul(&self, b: &[f64]) -> Vec<f64> {
        let mut y = b.to_vec();
        for (j, v) in self.reflectors.iter().enumerate() {
            let dot: f64 = v.iter().zip(&y[j..]).map(|(a, b)| a * b).sum();
            for (yi, vi) in y[j..].iter_mut().zip(v) {
                *yi -= 2.0 * vi * dot;
            }
        }
        y.truncate(self.r.nrows());
        y
    }

    /// Solves `R x = b`.
    pub fn solve_r(&self, b: &[f64]) -> Vec<f64> {
        let m = self.r.nrows();
        let mut x = b.to_vec();
        for i in (0..m).rev() {
            let mut s = x[i];
            for (k, xk) in x.iter().enumerate().skip(i + 1) {
                s -= self.r[[i, k]] * xk;
            }
            x[i] = s / self.r[[i, i]];
        }
        x
    }

    /// Solves `Rᵀ x = b`.
    pub fn solve_rt(&self, b: &[f64]) -> Vec<f64> {
        let m = self.r.nrows();
        let mut x = b.to_vec();
        for i in 0..m {
            let mut s = x[i];
            for (k, xk) in x.iter().enumerate().take(i) {
                s -= self.r[[k, i]] * xk;
            }
            x[i] = s / self.r[[i, i]];
        }
        x
    }

    /// Solves the normal equations `AᵀA x = b` without forming `AᵀA`.
    pub fn solve_normal(&self, b: &[f64]) -> Vec<f64> {
        self.solve_r(&self.solve_rt(b))
    }

    /// Least-squares solution of `A x = b`.
    pub fn least_squares(&self, b: &[f64]) -> Vec<f64> {
        self.solve_r(&self.qt_mul(b))
    }
}

/// Largest `|a[i,j] - a[j,i]|` and where it occurs.
pub fn asymmetry(a: ArrayView2<'_, f64>) -> (f64, usize, usize) {
    let n = a.nrows();
    let mut worst = (0.0, 0, 0);
    for i in 0..n {
        for j in i + 1..n {
            let gap = (a[[i, j]] - a[[j, i]]).abs();
            if gap > worst.0 || gap.is_nan() {
                worst = (gap, i, j);
            }
        }
    }
    worst
}

pub fn mat_vec(a: ArrayView2<'_, f64>, x: &[f64]) -> Vec<f64> {
    a.outer_iter()
        .map(|row| row.iter().zip(x).map(|(r, v)| r * v).sum())
        .collect()
}
