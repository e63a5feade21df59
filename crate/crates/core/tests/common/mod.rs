//! Brute-force reference implementations shared by the integration tests.
//! Everything here works on plain vectors and avoids the library's own
//! solvers, selection and kernel caches.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Mat = Vec<Vec<f64>>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Gaussian elimination with partial pivoting.
pub fn dense_solve(a: &Mat, b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut m: Mat = a.iter().zip(b).map(|(r, &v)| {
        let mut r = r.clone();
        r.push(v);
        r
    }).collect();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
            .unwrap();
        m.swap(col, piv);
        for row in col + 1..n {
            let f = m[row][col] / m[col][col];
            for k in col..=n {
                m[row][k] -= f * m[col][k];
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| m[i][k] * x[k]).sum();
        x[i] = (m[i][n] - s) / m[i][i];
    }
    x
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Indices sorted by descending score, ties to the lower index.
pub fn sorted_by_score(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    idx
}

/// Labeled training columns: `cols[i]` has class `classes[i]` (1-based,
/// grouped and ascending).
#[derive(Clone, Debug)]
pub struct Instance {
    pub cols: Mat,
    pub classes: Vec<usize>,
    pub num_classes: usize,
    pub y: Vec<f64>,
}

/// Random grouped instance with at least one column per class.
pub fn random_instance(seed: u64, max_b: usize, max_n: usize, max_c: usize) -> Instance {
    let mut r = rng(seed);
    let b = r.random_range(3..=max_b);
    let c = r.random_range(2..=max_c);
    let n = r.random_range(c.max(3)..=max_n);
    let mut counts = vec![1usize; c];
    for _ in c..n {
        counts[r.random_range(0..c)] += 1;
    }
    let mut cols = Vec::new();
    let mut classes = Vec::new();
    for (k, &cnt) in counts.iter().enumerate() {
        for _ in 0..cnt {
            cols.push((0..b).map(|_| StandardNormal.sample(&mut r)).collect::<Vec<f64>>());
            classes.push(k + 1);
        }
    }
    let y = (0..b).map(|_| StandardNormal.sample(&mut r)).collect();
    Instance { cols, classes, num_classes: c, y }
}

impl Instance {
    pub fn b(&self) -> usize {
        self.y.len()
    }

    pub fn n(&self) -> usize {
        self.cols.len()
    }

    /// Samples as rows plus integer labels, ready for `build_dictionary`.
    pub fn as_rows(&self) -> (ndarray::Array2<f64>, Vec<i64>) {
        let rows = ndarray::Array2::from_shape_fn((self.n(), self.b()), |(i, j)| self.cols[i][j]);
        (rows, self.classes.iter().map(|&c| c as i64).collect())
    }
}

pub fn unit(v: &[f64]) -> Vec<f64> {
    let n = norm(v);
    v.iter().map(|x| x / n).collect()
}

/// Regularized least squares on `support` followed by per-class
/// reconstruction residuals.
pub fn linear_residuals(cols: &Mat, classes: &[usize], c: usize, y: &[f64], support: &[usize], alpha: f64) -> Vec<f64> {
    let k = support.len();
    let mut g = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in 0..k {
            g[i][j] = dot(&cols[support[i]], &cols[support[j]]) + if i == j { alpha } else { 0.0 };
        }
    }
    let rhs: Vec<f64> = support.iter().map(|&p| dot(&cols[p], y)).collect();
    let x = if k == 0 { vec![] } else { dense_solve(&g, &rhs) };
    (1..=c)
        .map(|cls| {
            let mut r = y.to_vec();
            for (a, &p) in support.iter().enumerate() {
                if classes[p] == cls {
                    for (ri, ci) in r.iter_mut().zip(&cols[p]) {
                        *ri -= x[a] * ci;
                    }
                }
            }
            norm(&r)
        })
        .collect()
}

/// Linear thresholding classifier from scratch on unit columns and unit `y`.
pub fn btc_oracle(inst: &Instance, m: usize, alpha: f64) -> Vec<f64> {
    let cols: Mat = inst.cols.iter().map(|c| unit(c)).collect();
    let y = unit(&inst.y);
    let scores: Vec<f64> = cols.iter().map(|c| dot(c, &y).abs()).collect();
    let support: Vec<usize> = sorted_by_score(&scores)[..m].to_vec();
    linear_residuals(&cols, &inst.classes, inst.num_classes, &y, &support, alpha)
}

pub fn ratio(eps: &[f64], own: usize) -> f64 {
    let rival = eps
        .iter()
        .enumerate()
        .filter(|(k, _)| k + 1 != own)
        .map(|(_, &e)| e)
        .fold(f64::INFINITY, f64::min);
    eps[own - 1] / rival
}

/// `β_M` of column `i` on unit columns, brute force.
pub fn btc_beta_oracle(cols: &Mat, classes: &[usize], c: usize, i: usize, m: usize, alpha: f64) -> f64 {
    let a = &cols[i];
    let scores: Vec<f64> = cols.iter().map(|col| dot(col, a).abs()).collect();
    let support: Vec<usize> = sorted_by_score(&scores).into_iter().filter(|&j| j != i).take(m - 1).collect();
    let eps = linear_residuals(cols, classes, c, a, &support, alpha);
    ratio(&eps, classes[i])
}

pub fn btc_beta_average_oracle(inst: &Instance, m: usize, alpha: f64) -> f64 {
    let cols: Mat = inst.cols.iter().map(|c| unit(c)).collect();
    let n = cols.len();
    (0..n)
        .map(|i| btc_beta_oracle(&cols, &inst.classes, inst.num_classes, i, m, alpha))
        .sum::<f64>()
        / n as f64
}

/// Per-feature min-max scaling fitted on `cols`, applied to `cols` and `y`.
pub fn range_scale(cols: &Mat, y: &[f64]) -> (Mat, Vec<f64>) {
    let b = y.len();
    let lo: Vec<f64> = (0..b).map(|k| cols.iter().map(|c| c[k]).fold(f64::INFINITY, f64::min)).collect();
    let hi: Vec<f64> = (0..b).map(|k| cols.iter().map(|c| c[k]).fold(f64::NEG_INFINITY, f64::max)).collect();
    let f = |k: usize, v: f64| if hi[k] > lo[k] { (v - lo[k]) / (hi[k] - lo[k]) } else { v - lo[k] };
    let cols = cols.iter().map(|c| c.iter().enumerate().map(|(k, &v)| f(k, v)).collect()).collect();
    let y = y.iter().enumerate().map(|(k, &v)| f(k, v)).collect();
    (cols, y)
}

pub fn rbf(gamma: f64, a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * d).exp()
}

/// Kernel thresholding residuals on explicit kernel matrices.
pub fn kernel_residuals(
    k: &dyn Fn(&[f64], &[f64]) -> f64,
    cols: &Mat,
    classes: &[usize],
    c: usize,
    y: &[f64],
    support: &[usize],
    alpha: f64,
) -> Vec<f64> {
    let s = support.len();
    let mut g = vec![vec![0.0; s]; s];
    for i in 0..s {
        for j in 0..s {
            g[i][j] = k(&cols[support[i]], &cols[support[j]]) + if i == j { alpha } else { 0.0 };
        }
    }
    let kv: Vec<f64> = support.iter().map(|&p| k(&cols[p], y)).collect();
    let x = if s == 0 { vec![] } else { dense_solve(&g, &kv) };
    let kyy = k(y, y);
    (1..=c)
        .map(|cls| {
            let own: Vec<usize> = (0..s).filter(|&a| classes[support[a]] == cls).collect();
            let cross: f64 = own.iter().map(|&a| x[a] * kv[a]).sum();
            let mut quad = 0.0;
            for &a in &own {
                for &bb in &own {
                    quad += x[a] * x[bb] * k(&cols[support[a]], &cols[support[bb]]);
                }
            }
            (kyy - 2.0 * cross + quad).max(0.0).sqrt()
        })
        .collect()
}

/// RBF kernel thresholding from raw columns: min-max scaling, raw kernel
/// ranking, dense solve, explicit residual formula.
pub fn kbtc_oracle(inst: &Instance, m: usize, alpha: f64, gamma: f64) -> Vec<f64> {
    let (cols, y) = range_scale(&inst.cols, &inst.y);
    let k = move |a: &[f64], b: &[f64]| rbf(gamma, a, b);
    let scores: Vec<f64> = cols.iter().map(|c| k(c, &y)).collect();
    let support: Vec<usize> = sorted_by_score(&scores)[..m].to_vec();
    kernel_residuals(&k, &cols, &inst.classes, inst.num_classes, &y, &support, alpha)
}

/// Cyclic Jacobi eigen-decomposition of a symmetric matrix. Returns the
/// eigenvalues and eigenvectors (as columns of the second result).
pub fn jacobi_eigen(a: &Mat) -> (Vec<f64>, Mat) {
    let n = a.len();
    let mut a = a.clone();
    let mut v: Mat = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off < 1e-24 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k][p], v[k][q]);
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i][i]).collect(), v)
}

/// Dense matrix of `I + λL` for the 4-neighbour guidance-weighted Laplacian.
pub fn wls_dense_solve(map: &Mat, guide: &Mat, lambda: f64, alpha: f64, eps: f64) -> Mat {
    let (h, w) = (map.len(), map[0].len());
    let n = h * w;
    let mut a = vec![vec![0.0; n]; n];
    for i in 0..n {
        a[i][i] = 1.0;
    }
    let mut link = |i: usize, j: usize, gi: f64, gj: f64| {
        let wt = lambda / ((gi - gj).abs().powf(alpha) + eps);
        a[i][i] += wt;
        a[j][j] += wt;
        a[i][j] -= wt;
        a[j][i] -= wt;
    };
    for r in 0..h {
        for c in 0..w {
            if c + 1 < w {
                link(r * w + c, r * w + c + 1, guide[r][c], guide[r][c + 1]);
            }
            if r + 1 < h {
                link(r * w + c, (r + 1) * w + c, guide[r][c], guide[r + 1][c]);
            }
        }
    }
    let b: Vec<f64> = map.iter().flatten().copied().collect();
    let x = dense_solve(&a, &b);
    x.chunks(w).map(|r| r.to_vec()).collect()
}

/// Mean filter with clamped (replicated) borders, direct double loop.
pub fn box_oracle(map: &Mat, window: usize) -> Mat {
    let (h, w) = (map.len(), map[0].len());
    let r = (window / 2) as isize;
    (0..h)
        .map(|i| {
            (0..w)
                .map(|j| {
                    let mut s = 0.0;
                    for di in -r..=r {
                        for dj in -r..=r {
                            let ii = (i as isize + di).clamp(0, h as isize - 1) as usize;
                            let jj = (j as isize + dj).clamp(0, w as isize - 1) as usize;
                            s += map[ii][jj];
                        }
                    }
                    s / (window * window) as f64
                })
                .collect()
        })
        .collect()
}

/// OA, AA and kappa straight from their definitions.
pub fn metrics_oracle(pred: &[usize], truth: &[usize]) -> (f64, f64, f64) {
    let pairs: Vec<(usize, usize)> = truth.iter().zip(pred).filter(|(t, _)| **t != 0).map(|(&t, &p)| (t, p)).collect();
    let n = pairs.len() as f64;
    let c = pairs.iter().map(|&(t, p)| t.max(p)).max().unwrap();
    let oa = pairs.iter().filter(|(t, p)| t == p).count() as f64 / n;
    let mut recalls = Vec::new();
    let mut pe = 0.0;
    for k in 1..=c {
        let truth_k = pairs.iter().filter(|(t, _)| *t == k).count() as f64;
        let pred_k = pairs.iter().filter(|(_, p)| *p == k).count() as f64;
        if truth_k > 0.0 {
            recalls.push(pairs.iter().filter(|(t, p)| *t == k && *p == k).count() as f64 / truth_k);
        }
        pe += truth_k * pred_k / (n * n);
    }
    let aa = recalls.iter().sum::<f64>() / recalls.len() as f64;
    (oa, aa, (oa - pe) / (1.0 - pe))
}
