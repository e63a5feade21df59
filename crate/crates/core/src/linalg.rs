//! Dense kernels shared by the classifiers.

use std::cmp::Ordering;
use std::ops::Deref;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::{Dictionary, HsiCube, NormMode};
use crate::error::{Error, Result};

/// Lower Cholesky factor of `G + αI`, grown one row at a time.
///
/// Growing the factor lets a caller that scans thresholds `M = 1, 2, …`
/// over a fixed ranking reuse the factor of the previous prefix.
#[derive(Debug, Clone, Default)]
pub struct Cholesky {
    rows: Vec<Vec<f64>>,
}

impl Cholesky {
    pub fn new() -> Self {
        Self::default()
    }

    /// Factors `g + alpha·I` in one go.
    pub fn factor(g: ArrayView2<'_, f64>, alpha: f64) -> Result<Self> {
        let n = g.nrows();
        if g.ncols() != n {
            return Err(Error::Dimension(format!("matrix is {}x{}, not square", n, g.ncols())));
        }
        let mut chol = Self {
            rows: Vec::with_capacity(n),
        };
        let mut row = Vec::with_capacity(n);
        for k in 0..n {
            row.clear();
            row.extend((0..k).map(|j| g[[k, j]]));
            chol.push(&row, g[[k, k]] + alpha)?;
        }
        Ok(chol)
    }

    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    /// Appends a row/column: `off_diag[j]` is the new entry against row `j`,
    /// `diag` is the new (already regularized) diagonal entry. On failure the
    /// factor is left unchanged.
    pub fn push(&mut self, off_diag: &[f64], diag: f64) -> Result<()> {
        let k = self.rows.len();
        if off_diag.len() != k {
            return Err(Error::Dimension(format!(
                "row {k} needs {k} off-diagonal entries, got {}",
                off_diag.len()
            )));
        }
        let mut row = Vec::with_capacity(k + 1);
        for j in 0..k {
            let lj = &self.rows[j];
            let s: f64 = (0..j).map(|p| row[p] * lj[p]).sum();
            row.push((off_diag[j] - s) / lj[j]);
        }
        let pivot = diag - row.iter().map(|v| v * v).sum::<f64>();
        if pivot <= 0.0 || !pivot.is_finite() {
            return Err(Error::NotPositiveDefinite { pivot: k, value: pivot });
        }
        row.push(pivot.sqrt());
        self.rows.push(row);
        Ok(())
    }

    /// Solves `(G + αI) x = b` with the current factor.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.rows.len();
        if b.len() != n {
            return Err(Error::Dimension(format!("rhs has {} entries, system has {n}", b.len())));
        }
        let mut z = vec![0.0; n];
        for i in 0..n {
            let li = &self.rows[i];
            let s: f64 = (0..i).map(|j| li[j] * z[j]).sum();
            z[i] = (b[i] - s) / li[i];
        }
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|j| self.rows[j][i] * z[j]).sum();
            z[i] = (z[i] - s) / self.rows[i][i];
        }
        Ok(z)
    }
}

/// Solves `(G + αI) x = b` for symmetric `G` by Cholesky factorization.
pub fn solve_spd_regularized(g: ArrayView2<'_, f64>, b: ArrayView1<'_, f64>, alpha: f64) -> Result<Array1<f64>> {
    if alpha < 0.0 || !alpha.is_finite() {
        return Err(Error::InvalidParam(format!("alpha must be finite and ≥ 0, got {alpha}")));
    }
    if g.nrows() != b.len() {
        return Err(Error::Dimension(format!(
            "matrix has {} rows, rhs has {}",
            g.nrows(),
            b.len()
        )));
    }
    let chol = Cholesky::factor(g, alpha)?;
    Ok(Array1::from(chol.solve(&b.to_vec())?))
}

/// How correlations are ranked by the top-M operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SelectionMode {
    /// Rank by `|v_i|`.
    Magnitude,
    /// Rank by `v_i`.
    Raw,
}

impl SelectionMode {
    fn score(self, v: f64) -> f64 {
        match self {
            SelectionMode::Magnitude => v.abs(),
            SelectionMode::Raw => v,
        }
    }
}

/// Selected column indices in selection order (descending score, ties by
/// ascending index).
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct IndexSet(Vec<usize>);

impl IndexSet {
    pub fn new(indices: Vec<usize>) -> Self {
        Self(indices)
    }

    pub fn into_vec(self) -> Vec<usize> {
        self.0
    }
}

impl Deref for IndexSet {
    type Target = [usize];
    fn deref(&self) -> &[usize] {
        &self.0
    }
}

fn order<'a>(v: &'a ArrayView1<'_, f64>, mode: SelectionMode) -> impl Fn(&usize, &usize) -> Ordering + 'a {
    move |&a, &b| {
        mode.score(v[b])
            .total_cmp(&mode.score(v[a]))
            .then(a.cmp(&b))
    }
}

/// Full ranking of `v` (all indices, best first).
pub fn rank_all(v: ArrayView1<'_, f64>, mode: SelectionMode) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_unstable_by(order(&v, mode));
    idx
}

fn top_k(v: ArrayView1<'_, f64>, mut idx: Vec<usize>, k: usize, mode: SelectionMode) -> Vec<usize> {
    let cmp = order(&v, mode);
    if k < idx.len() {
        idx.select_nth_unstable_by(k, &cmp);
        idx.truncate(k);
    }
    idx.sort_unstable_by(&cmp);
    idx
}

/// Indices of the `m` largest entries of `v`.
pub fn top_m_select(v: ArrayView1<'_, f64>, m: usize, mode: SelectionMode) -> Result<IndexSet> {
    if m < 1 || m > v.len() {
        return Err(Error::InvalidParam(format!(
            "threshold M={m} outside 1..={}",
            v.len()
        )));
    }
    Ok(IndexSet(top_k(v, (0..v.len()).collect(), m, mode)))
}

/// Indices of the `m − 1` largest entries of `v`, never selecting `excluded`.
pub fn top_m_select_excluding(
    v: ArrayView1<'_, f64>,
    m: usize,
    excluded: usize,
    mode: SelectionMode,
) -> Result<IndexSet> {
    if excluded >= v.len() {
        return Err(Error::InvalidParam(format!(
            "excluded index {excluded} outside 0..{}",
            v.len()
        )));
    }
    if m < 2 || m > v.len() {
        return Err(Error::InvalidParam(format!(
            "threshold M={m} outside 2..={}",
            v.len()
        )));
    }
    let idx = (0..v.len()).filter(|&i| i != excluded).collect();
    Ok(IndexSet(top_k(v, idx, m - 1, mode)))
}

const PCA_VECTOR_TOL: f64 = 1e-10;
const PCA_VALUE_TOL: f64 = 1e-8;
const PCA_MAX_ITER: usize = 5000;

/// Projects every pixel onto the dominant principal axis of the band
/// covariance and rescales the result to `[0, 1]`.
///
/// The sign is chosen so the component correlates non-negatively with the
/// per-pixel band mean. A cube without variance yields an all-zero image.
pub fn pca_first_component(cube: &HsiCube) -> Result<Array2<f64>> {
    let (h, w, bands) = (cube.height(), cube.width(), cube.bands());
    if bands == 0 {
        return Err(Error::Dimension("cube has no bands".into()));
    }
    let mut x = cube.pixels();
    let n = x.nrows().max(1) as f64;
    let band_mean = x.mean_axis(Axis(1)).unwrap_or_else(|| Array1::zeros(x.nrows()));
    let mean = x.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(bands));
    x -= &mean;
    let cov = x.t().dot(&x) / n;
    let trace: f64 = cov.diag().sum();
    if trace <= 0.0 {
        return Ok(Array2::zeros((h, w)));
    }

    // permutation-equivariant start so results do not depend on band order
    let mut v: Array1<f64> = cov.diag().mapv(|d| 1.0 + d / trace);
    v /= v.dot(&v).sqrt();
    let mut residual = f64::INFINITY;
    let (mut lambda, mut prev) = (0.0, f64::NAN);
    let mut converged = false;
    for _ in 0..PCA_MAX_ITER {
        let cv = cov.dot(&v);
        prev = lambda;
        lambda = v.dot(&cv);
        let r = &cv - &(&v * lambda);
        residual = r.dot(&r).sqrt();
        if residual <= PCA_VECTOR_TOL * lambda.abs() {
            converged = true;
            break;
        }
        let norm = cv.dot(&cv).sqrt();
        if norm == 0.0 {
            break;
        }
        v = cv / norm;
    }
    // eigenvalue-only agreement still counts when the vector test is out of reach
    if !converged && (lambda - prev).abs() > PCA_VALUE_TOL * lambda.abs() {
        return Err(Error::NoConvergence {
            iterations: PCA_MAX_ITER,
            residual,
        });
    }

    let mut pc = x.dot(&v);
    let bm = band_mean.mean().unwrap_or(0.0);
    let corr: f64 = pc.iter().zip(band_mean.iter()).map(|(p, b)| p * (b - bm)).sum();
    if corr < 0.0 {
        pc.mapv_inplace(|p| -p);
    }
    let lo = pc.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = pc.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    pc.mapv_inplace(|p| if span > 0.0 { (p - lo) / span } else { 0.0 });
    Ok(pc.into_shape_with_order((h, w)).expect("pixel count matches image"))
}

/// Largest absolute inner product between two distinct dictionary columns.
pub fn mutual_coherence(dict: &Dictionary) -> Result<f64> {
    if dict.norm_mode() != NormMode::L2Columns {
        return Err(Error::InvalidParam("coherence needs an L2-normalized dictionary".into()));
    }
    let n = dict.num_samples();
    if n < 2 {
        return Err(Error::Dimension("coherence needs at least two columns".into()));
    }
    let gram = dict.columns().t().dot(&dict.columns());
    let mut mu: f64 = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            mu = mu.max(gram[[i, j]].abs());
        }
    }
    Ok(mu.min(1.0))
}
