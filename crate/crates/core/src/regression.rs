//! One-class kernel regression with an all-ones response.
//!
//! Setting every bona fide response to the same nonzero constant (here 1)
//! and solving `K alpha = 1` maps all training rows onto one point, which
//! makes the within-class scatter of the projected responses vanish while
//! the between-class scatter against an outlier at the origin stays at 1.
//! [`fisher_diagnostics`] measures both quantities on realised responses.
//!
//! The sparse variant minimises `||K alpha - 1||^2 + delta * ||alpha||_1`
//! by following the lasso path with least angle regression, using `K` as
//! the design matrix. Cardinality, not `delta`, is the user-facing knob.

use ndarray::{Array2, ArrayView2};

use crate::error::{OckrError, Result};
use crate::linalg::{asymmetry, mat_vec, Cholesky, Qr};

#[derive(Debug, Clone, PartialEq)]
pub struct DenseSolution {
    pub alpha: Vec<f64>,
    /// `||K alpha - 1||_2` against the unjittered matrix.
    pub residual_norm: f64,
    /// Ridge actually added to the diagonal.
    pub jitter: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseSolution {
    /// Nonzero coefficients as `(row index, value)`, ascending by index.
    pub coefficients: Vec<(usize, f64)>,
    pub delta: f64,
    pub nnz: usize,
    pub target_nnz: usize,
    /// The path ended before reaching `target_nnz` nonzeros.
    pub shortfall: bool,
    /// Number of LARS steps taken.
    pub steps: usize,
}

impl SparseSolution {
    pub fn dense_alpha(&self, n: usize) -> Vec<f64> {
        let mut a = vec![0.0; n];
        for &(i, v) in &self.coefficients {
            a[i] = v;
        }
        a
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FisherDiagnostics {
    /// Within-class scatter of the projected training responses.
    pub s_w: f64,
    /// Between-class scatter against a single outlier at the origin.
    pub s_b: f64,
    /// Mean projected response.
    pub m1: f64,
}

impl FisherDiagnostics {
    /// Fisher ratio `s_b / s_w`; infinite in the null-space case.
    pub fn criterion(&self) -> f64 {
        self.s_b / self.s_w
    }
}

fn check_square_symmetric(k: ArrayView2<'_, f64>) -> Result<()> {
    if k.nrows() != k.ncols() {
        return Err(OckrError::Invalid(format!(
            "kernel matrix is {}x{}",
            k.nrows(),
            k.ncols()
        )));
    }
    let (gap, i, j) = asymmetry(k);
    let scale = k.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    if !(gap <= 1e-12 * scale) {
        return Err(OckrError::NotSymmetric { i, j, gap });
    }
    Ok(())
}

fn residual_norm(k: ArrayView2<'_, f64>, alpha: &[f64]) -> f64 {
    mat_vec(k, alpha)
        .iter()
        .map(|r| (r - 1.0) * (r - 1.0))
        .sum::<f64>()
        .sqrt()
}

/// Solves `(K + jitter I) alpha = 1` by Cholesky, escalating the jitter if
/// the requested value does not give a positive-definite system.
pub fn solve_dense(k: ArrayView2<'_, f64>, jitter: f64) -> Result<DenseSolution> {
    check_square_symmetric(k)?;
    let n = k.nrows();
    if n == 0 {
        return Err(OckrError::TooFewRows {
            needed: 1,
            found: 0,
        });
    }
    if !(jitter >= 0.0) {
        return Err(OckrError::Invalid(format!("jitter {jitter} must be >= 0")));
    }
    let chol = Cholesky::factor_escalating(k, jitter)?;
    let alpha = chol.solve(&vec![1.0; n]);
    let residual_norm = residual_norm(k, &alpha);
    Ok(DenseSolution {
        alpha,
        residual_norm,
        jitter: chol.jitter(),
    })
}

/// `||K alpha - 1||^2 + delta * sum |alpha_i|`.
pub fn lasso_objective(k: ArrayView2<'_, f64>, alpha: &[f64], delta: f64) -> f64 {
    let fit: f64 = mat_vec(k, alpha)
        .iter()
        .map(|r| (r - 1.0) * (r - 1.0))
        .sum();
    fit + delta * alpha.iter().map(|a| a.abs()).sum::<f64>()
}

/// Correlations of the columns of `K` with the residual, `Kᵀ (1 - K alpha)`.
fn correlations(k: ArrayView2<'_, f64>, alpha: &[f64]) -> Vec<f64> {
    let residual: Vec<f64> = mat_vec(k, alpha).iter().map(|r| 1.0 - r).collect();
    // K is symmetric, so Kᵀ r = K r.
    mat_vec(k, &residual)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathEvent {
    /// A variable reached the maximal correlation and joins next step.
    Join(usize),
    /// An active coefficient crossed zero and left the active set.
    Drop(usize),
    /// Correlations reached zero: the unregularised least-squares point.
    End,
}

/// One breakpoint of the lasso path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathPoint {
    pub alpha: Vec<f64>,
    pub delta: f64,
    pub event: PathEvent,
}

impl PathPoint {
    pub fn nnz(&self) -> usize {
        self.alpha.iter().filter(|a| **a != 0.0).count()
    }
}

/// Relative gap below which two correlations count as tied.
const TIE_TOLERANCE: f64 = 1e-12;
/// Relative pivot size below which an active design counts as singular.
const RANK_TOLERANCE: f64 = 1e-13;

/// Iterator over lasso-path breakpoints for design `K` and response `1`.
///
/// Ties in correlation are broken towards the lowest index, and no step
/// is randomised, so identical inputs give bit-identical paths.
pub struct LarsPath<'a> {
    k: ArrayView2<'a, f64>,
    alpha: Vec<f64>,
    active: Vec<usize>,
    signs: Vec<f64>,
    pending: Option<usize>,
    excluded: Option<usize>,
    finished: bool,
}

impl<'a> LarsPath<'a> {
    pub fn new(k: ArrayView2<'a, f64>) -> Result<Self> {
        check_square_symmetric(k)?;
        let n = k.nrows();
        if n == 0 {
            return Err(OckrError::TooFewRows {
                needed: 1,
                found: 0,
            });
        }
        let alpha = vec![0.0; n];
        let c = correlations(k, &alpha);
        let mut best = 0;
        for j in 1..n {
            if c[j].abs() > c[best].abs() {
                best = j;
            }
        }
        let finished = c[best] == 0.0;
        Ok(LarsPath {
            k,
            alpha,
            active: Vec::new(),
            signs: Vec::new(),
            pending: Some(best),
            excluded: None,
            finished,
        })
    }

    /// Regularisation weight at the starting point `alpha = 0`.
    pub fn delta_max(&self) -> f64 {
        2.0 * correlations(self.k, &vec![0.0; self.k.nrows()])
            .iter()
            .fold(0.0f64, |m, c| m.max(c.abs()))
    }

    fn step(&mut self) -> Result<PathPoint> {
        let k = self.k;
        let n = k.nrows();
        let c = correlations(k, &self.alpha);
        if let Some(j) = self.pending.take() {
            self.active.push(j);
            self.signs.push(if c[j] >= 0.0 { 1.0 } else { -1.0 });
        }
        let big_c = self.active.iter().fold(0.0f64, |m, &i| m.max(c[i].abs()));

        // Equiangular direction: (X_Aᵀ X_A) d = s_A with X_A = K[:, A],
        // solved through a QR factor of X_A to avoid squaring its condition.
        let m = self.active.len();
        let mut x_a = Array2::<f64>::zeros((n, m));
        for (p, &ip) in self.active.iter().enumerate() {
            x_a.column_mut(p).assign(&k.column(ip));
        }
        let qr = Qr::new(x_a.view());
        let d = if qr.diag_ratio() > RANK_TOLERANCE {
            let mut d = qr.solve_normal(&self.signs);
            // One round of iterative refinement on the normal equations.
            let xd = x_a.dot(&ndarray::ArrayView1::from(&d));
            let back = x_a.t().dot(&xd);
            let resid: Vec<f64> = self
                .signs
                .iter()
                .zip(back.iter())
                .map(|(s, b)| s - b)
                .collect();
            for (di, ci) in d.iter_mut().zip(qr.solve_normal(&resid)) {
                *di += ci;
            }
            d
        } else {
            let mut gram = Array2::<f64>::zeros((m, m));
            for p in 0..m {
                for q in 0..=p {
                    let v = x_a.column(p).dot(&x_a.column(q));
                    gram[[p, q]] = v;
                    gram[[q, p]] = v;
                }
            }
            Cholesky::factor_escalating(gram.view(), 0.0)?.solve(&self.signs)
        };
        let mut u = vec![0.0; n];
        for (&i, &di) in self.active.iter().zip(&d) {
            for (ur, kr) in u.iter_mut().zip(k.column(i).iter()) {
                *ur += di * kr;
            }
        }
        let a = mat_vec(k, &u);

        let mut gamma = big_c;
        let mut event = PathEvent::End;
        let in_active = {
            let mut mask = vec![false; n];
            for &i in &self.active {
                mask[i] = true;
            }
            mask
        };
        // Variables tied with the active correlation join without moving.
        let tie = (0..n).find(|&j| {
            !in_active[j] && Some(j) != self.excluded && c[j].abs() >= big_c * (1.0 - TIE_TOLERANCE)
        });
        if let Some(j) = tie {
            gamma = 0.0;
            event = PathEvent::Join(j);
        }
        for j in 0..n {
            if tie.is_some() || in_active[j] {
                continue;
            }
            let candidates = [
                (1.0, (big_c - c[j]) / (1.0 - a[j])),
                (-1.0, (big_c + c[j]) / (1.0 + a[j])),
            ];
            for (sign, g) in candidates {
                // A variable that just left sits at |c_j| = C with its old
                // sign; only a crossing with the opposite sign is real.
                if Some(j) == self.excluded && sign == c[j].signum() {
                    continue;
                }
                if g > 0.0 && g.is_finite() && g < gamma {
                    gamma = g;
                    event = PathEvent::Join(j);
                }
            }
        }
        for (p, &i) in self.active.iter().enumerate() {
            if tie.is_some() || self.alpha[i] == 0.0 || d[p] == 0.0 {
                continue;
            }
            let g = -self.alpha[i] / d[p];
            if g > 0.0 && g < gamma {
                gamma = g;
                event = PathEvent::Drop(i);
            }
        }

        for (&i, &di) in self.active.iter().zip(&d) {
            self.alpha[i] += gamma * di;
        }
        self.excluded = None;
        match event {
            PathEvent::Drop(i) => {
                self.alpha[i] = 0.0;
                let p = self.active.iter().position(|&x| x == i).expect("active");
                self.active.remove(p);
                self.signs.remove(p);
                self.excluded = Some(i);
            }
            PathEvent::Join(j) => self.pending = Some(j),
            PathEvent::End => {
                // Zero correlation on the active set: the least-squares fit.
                if qr.diag_ratio() > RANK_TOLERANCE {
                    let ones = vec![1.0; n];
                    for (&i, v) in self.active.iter().zip(qr.least_squares(&ones)) {
                        self.alpha[i] = v;
                    }
                }
                self.finished = true;
            }
        }
        if self.active.is_empty() && self.pending.is_none() {
            self.finished = true;
        }

        let c = correlations(k, &self.alpha);
        let delta = 2.0 * c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        Ok(PathPoint {
            alpha: self.alpha.clone(),
            delta,
            event,
        })
    }
}

impl Iterator for LarsPath<'_> {
    type Item = Result<PathPoint>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.finished {
            return None;
        }
        let out = self.step();
        if out.is_err() {
            self.finished = true;
        }
        Some(out)
    }
}

/// Follows the lasso path until `target_nnz` coefficients are nonzero.
///
/// Tied variables enter together, so the path can skip a cardinality. The
/// result never exceeds the budget: when `target_nnz` is never hit exactly,
/// the densest point below it is returned (the empty solution at
/// `delta_max` if need be) with [`SparseSolution::shortfall`] set.
pub fn solve_lars_path(k: ArrayView2<'_, f64>, target_nnz: usize) -> Result<SparseSolution> {
    let n = k.nrows();
    if target_nnz == 0 {
        return Err(OckrError::Invalid("target_nnz must be positive".into()));
    }
    if target_nnz > n {
        return Err(OckrError::TargetTooLarge {
            target: target_nnz,
            n,
        });
    }
    let path = LarsPath::new(k)?;
    let start = PathPoint {
        alpha: vec![0.0; n],
        delta: path.delta_max(),
        event: PathEvent::End,
    };
    // Lasso drops can revisit cardinalities; bound the walk generously.
    let max_steps = 8 * n + 64;
    let mut best = start;
    let mut steps = 0;
    for point in path.take(max_steps) {
        let point = point?;
        steps += 1;
        let nnz = point.nnz();
        if nnz <= target_nnz && nnz >= best.nnz() {
            best = point;
            if nnz == target_nnz {
                break;
            }
        }
    }
    let coefficients: Vec<(usize, f64)> = best
        .alpha
        .iter()
        .enumerate()
        .filter(|(_, a)| **a != 0.0)
        .map(|(i, a)| (i, *a))
        .collect();
    let nnz = coefficients.len();
    if nnz < target_nnz {
        log::warn!("lasso path ended with {nnz} nonzeros, short of target {target_nnz}");
    }
    Ok(SparseSolution {
        coefficients,
        delta: best.delta,
        nnz,
        target_nnz,
        shortfall: nnz < target_nnz,
        steps,
    })
}

/// Within- and between-class scatter of the responses `y = K alpha`.
pub fn fisher_diagnostics(k: ArrayView2<'_, f64>, alpha: &[f64]) -> Result<FisherDiagnostics> {
    if alpha.len() != k.ncols() {
        return Err(OckrError::DimMismatch {
            expected: k.ncols(),
            found: alpha.len(),
        });
    }
    Ok(scatter_of_responses(&mat_vec(k, alpha)))
}

/// `s_w = yᵀy - (1/n) yᵀ 1 1ᵀ y`, `s_b = (1/n²) yᵀ 1 1ᵀ y`.
pub fn scatter_of_responses(y: &[f64]) -> FisherDiagnostics {
    let n = y.len() as f64;
    let sum: f64 = y.iter().sum();
    let sq: f64 = y.iter().map(|v| v * v).sum();
    FisherDiagnostics {
        s_w: sq - sum * sum / n,
        s_b: sum * sum / (n * n),
        m1: sum / n,
    }
}
