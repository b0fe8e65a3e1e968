//! Deliberately naive reference implementations. None of these call into
//! the library's numerical code.
#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub type Mat = Vec<Vec<f64>>;

/// Gaussian elimination with partial pivoting.
pub fn gauss_solve(a: &Mat, b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut m: Mat = a
        .iter()
        .zip(b)
        .map(|(row, &bi)| {
            let mut r = row.clone();
            r.push(bi);
            r
        })
        .collect();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
            .unwrap();
        m.swap(col, piv);
        for r in col + 1..n {
            let f = m[r][col] / m[col][col];
            for c in col..=n {
                m[r][c] -= f * m[col][c];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let mut s = m[r][n];
        for c in r + 1..n {
            s -= m[r][c] * x[c];
        }
        x[r] = s / m[r][r];
    }
    x
}

pub fn mat_vec(a: &Mat, x: &[f64]) -> Vec<f64> {
    a.iter()
        .map(|row| row.iter().zip(x).map(|(p, q)| p * q).sum())
        .collect()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Reciprocal of the mean Euclidean distance over distinct pairs.
pub fn theta_bruteforce(rows: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            total += dist(&rows[i], &rows[j]);
            pairs += 1;
        }
    }
    pairs as f64 / total
}

pub fn kernel(a: &[f64], b: &[f64], theta: f64) -> f64 {
    let d = dist(a, b);
    (-theta * d * d).exp()
}

/// Fused Gram by an explicit loop over views and pairs.
pub fn fused_gram_loop(views: &[Vec<Vec<f64>>], thetas: &[f64]) -> Mat {
    let n = views[0].len();
    let mut g = vec![vec![0.0; n]; n];
    for (rows, &theta) in views.iter().zip(thetas) {
        for i in 0..n {
            for j in 0..n {
                g[i][j] += kernel(&rows[i], &rows[j], theta) / views.len() as f64;
            }
        }
    }
    g
}

/// `sum_i alpha_i * mean_v k_v(z_v, x_iv)` by a triple loop.
pub fn score_loop(alpha: &[f64], support: &[Vec<Vec<f64>>], thetas: &[f64], z: &[Vec<f64>]) -> f64 {
    let mut s = 0.0;
    for (i, a) in alpha.iter().enumerate() {
        let mut k = 0.0;
        for v in 0..support.len() {
            k += kernel(&z[v], &support[v][i], thetas[v]);
        }
        s += a * k / support.len() as f64;
    }
    s
}

pub fn lasso_objective(k: &Mat, alpha: &[f64], delta: f64) -> f64 {
    let r: f64 = mat_vec(k, alpha)
        .iter()
        .map(|v| (v - 1.0) * (v - 1.0))
        .sum();
    r + delta * alpha.iter().map(|a| a.abs()).sum::<f64>()
}

/// Cyclic coordinate descent for `||K a - 1||^2 + delta ||a||_1`.
pub fn lasso_cd(k: &Mat, delta: f64, tol: f64, max_sweeps: usize) -> Vec<f64> {
    let n = k.len();
    let col_sq: Vec<f64> = (0..n)
        .map(|j| (0..n).map(|i| k[i][j] * k[i][j]).sum())
        .collect();
    let mut alpha = vec![0.0; n];
    let mut resid = vec![1.0; n]; // 1 - K alpha
    for _ in 0..max_sweeps {
        let mut change = 0.0f64;
        for j in 0..n {
            let rho: f64 = (0..n)
                .map(|i| k[i][j] * (resid[i] + k[i][j] * alpha[j]))
                .sum();
            let new = if rho > delta / 2.0 {
                (rho - delta / 2.0) / col_sq[j]
            } else if rho < -delta / 2.0 {
                (rho + delta / 2.0) / col_sq[j]
            } else {
                0.0
            };
            let step = new - alpha[j];
            if step != 0.0 {
                for i in 0..n {
                    resid[i] -= k[i][j] * step;
                }
                alpha[j] = new;
            }
            change = change.max(step.abs());
        }
        if change < tol {
            break;
        }
    }
    alpha
}

/// Largest absolute violation of the lasso optimality conditions.
pub fn kkt_violation(k: &Mat, alpha: &[f64], delta: f64) -> f64 {
    let n = k.len();
    let r: Vec<f64> = mat_vec(k, alpha).iter().map(|v| v - 1.0).collect();
    let mut worst = 0.0f64;
    for j in 0..n {
        let g: f64 = 2.0 * (0..n).map(|i| k[i][j] * r[i]).sum::<f64>();
        let v = if alpha[j] != 0.0 {
            (g + delta * alpha[j].signum()).abs()
        } else {
            (g.abs() - delta).max(0.0)
        };
        worst = worst.max(v);
    }
    worst
}

/// AUC by comparing every bona fide score with every attack score.
pub fn auc_pairwise(bona: &[f64], attack: &[f64]) -> f64 {
    let mut twice = 0u64;
    for &b in bona {
        for &a in attack {
            twice += if b > a {
                2
            } else if b == a {
                1
            } else {
                0
            };
        }
    }
    twice as f64 / (2 * bona.len() * attack.len()) as f64
}

pub fn far_frr_count(bona: &[f64], attack: &[f64], t: f64) -> (f64, f64) {
    let far = attack.iter().filter(|&&s| s >= t).count() as f64 / attack.len() as f64;
    let frr = bona.iter().filter(|&&s| s < t).count() as f64 / bona.len() as f64;
    (far, frr)
}

/// Tries every distinct score as a threshold plus one above the maximum.
/// Returns `(eer, far, frr)` at the first minimiser of `|FAR - FRR|`.
pub fn eer_exhaustive(bona: &[f64], attack: &[f64]) -> (f64, f64, f64) {
    let mut ts: Vec<f64> = bona.iter().chain(attack).copied().collect();
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    ts.push(f64::INFINITY);
    let mut best: Option<(f64, f64, f64)> = None;
    for t in ts {
        let (far, frr) = far_frr_count(bona, attack, t);
        let gap = (far - frr).abs();
        if best.map_or(true, |(g, _, _)| gap < g - 1e-15) {
            best = Some((gap, far, frr));
        }
    }
    let (_, far, frr) = best.unwrap();
    ((far + frr) / 2.0, far, frr)
}

/// APCER per PAIS, APCER (max) and BPCER by counting.
pub fn apcer_bpcer_count(
    bona: &[f64],
    attacks: &[(String, f64)],
    t: f64,
) -> (BTreeMap<String, f64>, f64, f64) {
    let mut per: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for (p, s) in attacks {
        let e = per.entry(p.clone()).or_default();
        e.1 += 1;
        if *s >= t {
            e.0 += 1;
        }
    }
    let by: BTreeMap<String, f64> = per
        .into_iter()
        .map(|(p, (h, n))| (p, h as f64 / n as f64))
        .collect();
    let apcer = by.values().cloned().fold(0.0, f64::max);
    let bpcer = bona.iter().filter(|&&s| s < t).count() as f64 / bona.len() as f64;
    (by, apcer, bpcer)
}

/// Mean and sample standard deviation by two passes.
pub fn mean_std_two_pass(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let ss: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// `n` random unit vectors of dimension `dim`.
pub fn unit_rows(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect()
}

/// Random scores on a coarse grid so that ties are frequent.
pub fn tied_scores(rng: &mut ChaCha8Rng, n: usize, levels: u32, shift: f64) -> Vec<f64> {
    (0..n)
        .map(|_| rng.gen_range(0..levels) as f64 / levels as f64 + shift)
        .collect()
}
