//! Linear basic thresholding classifier.
//!
//! A test sample is correlated with every dictionary column, the `M` most
//! correlated columns are kept, and a Tikhonov-regularized least-squares fit
//! over those columns gives a sparse code. The class whose portion of the code
//! reconstructs the sample best wins.
//!
//! The same machinery, applied to a training column with that column removed
//! from the candidate set, gives the per-sample identification ratio `β`.
//! Averaging `β` over the dictionary and scanning `M` yields a threshold
//! estimate that needs no held-out data.

use ndarray::{Array1, ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dictionary, NormMode};
use crate::error::{Error, Result};
use crate::linalg::{
    rank_all, solve_spd_regularized, top_m_select, top_m_select_excluding, Cholesky, IndexSet,
    SelectionMode,
};

/// Threshold `M` and regularization `α`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BtcParams {
    pub threshold: usize,
    pub alpha: f64,
}

impl BtcParams {
    pub const DEFAULT_ALPHA: f64 = 0.01;
    pub const PIXEL_ALPHA: f64 = 1e-4;
    pub const SPATIAL_ALPHA: f64 = 1e-10;

    pub fn new(threshold: usize, alpha: f64) -> Self {
        Self { threshold, alpha }
    }

    /// Checks `1 ≤ M < B`, `M ≤ N` and `0 ≤ α < 1`.
    pub fn validate(&self, features: usize, samples: usize) -> Result<()> {
        validate_threshold(self.threshold, features, samples)?;
        validate_alpha(self.alpha)
    }
}

pub(crate) fn validate_threshold(m: usize, features: usize, samples: usize) -> Result<()> {
    if m < 1 || m >= features {
        return Err(Error::InvalidParam(format!(
            "threshold M={m} must satisfy 1 ≤ M < B={features}"
        )));
    }
    if m > samples {
        return Err(Error::InvalidParam(format!(
            "threshold M={m} exceeds the {samples} dictionary columns"
        )));
    }
    Ok(())
}

pub(crate) fn validate_alpha(alpha: f64) -> Result<()> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::InvalidParam(format!("alpha={alpha} outside [0, 1)")));
    }
    Ok(())
}

/// Per-class residuals for one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualVector(pub Vec<f64>);

impl ResidualVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn num_classes(&self) -> usize {
        self.0.len()
    }

    /// Residual of a class id (`1..=C`).
    pub fn get(&self, class_id: usize) -> f64 {
        self.0[class_id - 1]
    }

    /// Class id with the smallest residual; ties go to the lowest id.
    pub fn predicted_class(&self) -> usize {
        argmin(&self.0) + 1
    }
}

pub(crate) fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in values.iter().enumerate().skip(1) {
        if v < values[best] {
            best = k;
        }
    }
    best
}

/// Coefficients over a selected support; implicitly zero elsewhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseCode {
    pub support: IndexSet,
    pub coefficients: Vec<f64>,
    pub ambient: usize,
}

impl SparseCode {
    pub fn empty(ambient: usize) -> Self {
        Self {
            support: IndexSet::default(),
            coefficients: Vec::new(),
            ambient,
        }
    }

    pub fn to_dense(&self) -> Array1<f64> {
        let mut x = Array1::zeros(self.ambient);
        for (&i, &c) in self.support.iter().zip(&self.coefficients) {
            x[i] = c;
        }
        x
    }

    /// `(index, coefficient)` pairs whose column belongs to `class_id`.
    pub fn class_portion<'a>(
        &'a self,
        dict: &'a Dictionary,
        class_id: usize,
    ) -> impl Iterator<Item = (usize, f64)> + 'a {
        self.support
            .iter()
            .zip(&self.coefficients)
            .filter(move |(&i, _)| dict.class_of(i) == class_id)
            .map(|(&i, &c)| (i, c))
    }
}

/// Sparse coding on a raw matrix: correlate, keep the `m` strongest columns by
/// magnitude, solve the regularized normal equations on them.
pub fn threshold_code(
    columns: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    m: usize,
    alpha: f64,
) -> Result<SparseCode> {
    if y.len() != columns.nrows() {
        return Err(Error::Dimension(format!(
            "sample has {} features, matrix has {} rows",
            y.len(),
            columns.nrows()
        )));
    }
    let v = columns.t().dot(&y);
    let support = top_m_select(v.view(), m, SelectionMode::Magnitude)?;
    let x = solve_on_support(columns, y, &support, alpha)?;
    Ok(SparseCode {
        support,
        coefficients: x,
        ambient: columns.ncols(),
    })
}

fn solve_on_support(
    columns: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    support: &[usize],
    alpha: f64,
) -> Result<Vec<f64>> {
    if support.is_empty() {
        return Ok(Vec::new());
    }
    let d = columns.select(ndarray::Axis(1), support);
    let g = d.t().dot(&d);
    let b = d.t().dot(&y);
    Ok(solve_spd_regularized(g.view(), b.view(), alpha)?.to_vec())
}

/// `ε(j) = ‖y − A_j x_j‖₂` for every class. Classes without support keep `‖y‖₂`.
pub(crate) fn class_residuals(dict: &Dictionary, y: ArrayView1<'_, f64>, support: &[usize], coeffs: &[f64]) -> ResidualVector {
    let mut recon = vec![y.to_owned(); dict.num_classes()];
    for (&i, &c) in support.iter().zip(coeffs) {
        recon[dict.class_of(i) - 1].scaled_add(-c, &dict.column(i));
    }
    ResidualVector(recon.into_iter().map(|r| r.dot(&r).sqrt()).collect())
}

/// Solve and residual stages over a caller-chosen support. `y` is used as given.
pub fn btc_residuals_on_support(
    dict: &Dictionary,
    y: ArrayView1<'_, f64>,
    support: &IndexSet,
    alpha: f64,
) -> Result<(ResidualVector, SparseCode)> {
    if let Some(&bad) = support.iter().find(|&&i| i >= dict.num_samples()) {
        return Err(Error::InvalidParam(format!("support index {bad} out of range")));
    }
    let x = solve_on_support(dict.columns(), y, support, alpha)?;
    let eps = class_residuals(dict, y, support, &x);
    Ok((
        eps,
        SparseCode {
            support: support.clone(),
            coefficients: x,
            ambient: dict.num_samples(),
        },
    ))
}

fn check_linear(dict: &Dictionary) -> Result<()> {
    if dict.norm_mode() != NormMode::L2Columns {
        return Err(Error::InvalidParam(
            "linear thresholding needs an L2-normalized dictionary".into(),
        ));
    }
    Ok(())
}

fn unit(y: ArrayView1<'_, f64>, features: usize) -> Result<Array1<f64>> {
    if y.len() != features {
        return Err(Error::Dimension(format!(
            "sample has {} features, dictionary has {features}",
            y.len()
        )));
    }
    let norm = y.dot(&y).sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::InvalidParam("test sample has zero or non-finite norm".into()));
    }
    Ok(y.mapv(|v| v / norm))
}

/// Classifies `y` against an L2-normalized dictionary. `y` is normalized first.
pub fn btc_classify(dict: &Dictionary, y: ArrayView1<'_, f64>, params: &BtcParams) -> Result<(ResidualVector, SparseCode)> {
    check_linear(dict)?;
    params.validate(dict.num_features(), dict.num_samples())?;
    let y = unit(y, dict.num_features())?;
    let code = threshold_code(dict.columns(), y.view(), params.threshold, params.alpha)?;
    let eps = class_residuals(dict, y.view(), &code.support, &code.coefficients);
    Ok((eps, code))
}

/// Classifies every row of `samples` in parallel.
pub fn btc_classify_batch(dict: &Dictionary, samples: ArrayView2<'_, f64>, params: &BtcParams) -> Result<Vec<ResidualVector>> {
    (0..samples.nrows())
        .into_par_iter()
        .map(|i| btc_classify(dict, samples.row(i), params).map(|(eps, _)| eps))
        .collect()
}

/// `ε(i) / min_{j≠i} ε(j)`.
pub(crate) fn identification_ratio(eps: &ResidualVector, own: usize) -> Result<f64> {
    let rival = eps
        .values()
        .iter()
        .enumerate()
        .filter(|&(k, _)| k + 1 != own)
        .map(|(_, &e)| e)
        .fold(f64::INFINITY, f64::min);
    if rival == f64::INFINITY {
        return Err(Error::InvalidParam("identification ratio needs at least two classes".into()));
    }
    if rival <= 0.0 {
        return Err(Error::Numerical(format!(
            "a rival class reconstructs the sample of class {own} exactly"
        )));
    }
    Ok(eps.get(own) / rival)
}

fn global_index(dict: &Dictionary, class_id: usize, sample_idx: usize) -> Result<usize> {
    let part = dict
        .class(class_id)
        .ok_or_else(|| Error::InvalidParam(format!("unknown class {class_id}")))?;
    if sample_idx >= part.count {
        return Err(Error::InvalidParam(format!(
            "sample {sample_idx} outside class {class_id} ({} samples)",
            part.count
        )));
    }
    Ok(part.start + sample_idx)
}

fn check_ratio_preconditions(dict: &Dictionary, m: usize) -> Result<()> {
    if dict.num_classes() < 2 {
        return Err(Error::InvalidParam("identification ratio needs at least two classes".into()));
    }
    if m < 2 {
        return Err(Error::InvalidParam(format!("threshold M={m} must be ≥ 2 here")));
    }
    validate_threshold(m, dict.num_features(), dict.num_samples())
}

/// Identification ratio `β_M(a_i)` of one training column: the column is
/// classified against the dictionary with itself excluded from the support.
/// Values below 1 mean the column would be identified correctly.
pub fn btc_beta_sample(dict: &Dictionary, class_id: usize, sample_idx: usize, params: &BtcParams) -> Result<f64> {
    check_linear(dict)?;
    check_ratio_preconditions(dict, params.threshold)?;
    validate_alpha(params.alpha)?;
    let gi = global_index(dict, class_id, sample_idx)?;
    let a = dict.column(gi);
    let v = dict.columns().t().dot(&a);
    let support = top_m_select_excluding(v.view(), params.threshold, gi, SelectionMode::Magnitude)?;
    let (eps, _) = btc_residuals_on_support(dict, a, &support, params.alpha)?;
    identification_ratio(&eps, class_id)
}

/// Mean of `β_M` over every dictionary column.
pub fn btc_beta_average(dict: &Dictionary, m: usize, alpha: f64) -> Result<f64> {
    let params = BtcParams::new(m, alpha);
    let betas: Vec<f64> = dict
        .classes()
        .par_iter()
        .flat_map_iter(|part| (0..part.count).map(move |s| (part.class_id, s)))
        .map(|(c, s)| btc_beta_sample(dict, c, s, &params))
        .collect::<Result<_>>()?;
    Ok(betas.iter().sum::<f64>() / betas.len() as f64)
}

/// Walks the supports `ranking[..1]`, `ranking[..2]`, … up to `max_support`,
/// growing one Cholesky factor, and hands each prefix with its solution to
/// `visit`.
pub(crate) fn scan_prefixes(
    ranking: &[usize],
    max_support: usize,
    alpha: f64,
    gram: impl Fn(usize, usize) -> f64,
    rhs: impl Fn(usize) -> f64,
    mut visit: impl FnMut(&[usize], &[f64]) -> Result<()>,
) -> Result<()> {
    let mut chol = Cholesky::new();
    let mut b = Vec::with_capacity(max_support);
    let mut row = Vec::with_capacity(max_support);
    for k in 0..max_support.min(ranking.len()) {
        let p = ranking[k];
        row.clear();
        row.extend(ranking[..k].iter().map(|&q| gram(p, q)));
        chol.push(&row, gram(p, p) + alpha)?;
        b.push(rhs(p));
        let x = chol.solve(&b)?;
        visit(&ranking[..=k], &x)?;
    }
    Ok(())
}

/// `β_M` of column `gi` for every `M` in `thresholds` (ascending), reusing
/// one ranking and one growing factor.
fn beta_scan_linear(dict: &Dictionary, gi: usize, thresholds: &[usize], alpha: f64) -> Result<Vec<f64>> {
    let a = dict.column(gi);
    let own = dict.class_of(gi);
    let v = dict.columns().t().dot(&a);
    let ranking: Vec<usize> = rank_all(v.view(), SelectionMode::Magnitude)
        .into_iter()
        .filter(|&i| i != gi)
        .collect();
    let max_m = thresholds.iter().copied().max().unwrap_or(0);
    let mut out = Vec::with_capacity(thresholds.len());
    let mut next = 0;
    scan_prefixes(
        &ranking,
        max_m.saturating_sub(1),
        alpha,
        |p, q| dict.column(p).dot(&dict.column(q)),
        |p| v[p],
        |support, x| {
            while next < thresholds.len() && thresholds[next] - 1 == support.len() {
                let eps = class_residuals(dict, a, support, x);
                out.push(identification_ratio(&eps, own)?);
                next += 1;
            }
            Ok(())
        },
    )?;
    Ok(out)
}

/// Output of the threshold scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdEstimate {
    pub threshold: usize,
    /// `(M, β̄_M)` for every scanned `M`.
    pub profile: Vec<(usize, f64)>,
}

/// Averages `β_M` over the dictionary for each `M` in `range`.
pub fn btc_beta_profile(dict: &Dictionary, alpha: f64, range: std::ops::RangeInclusive<usize>) -> Result<Vec<(usize, f64)>> {
    check_linear(dict)?;
    validate_alpha(alpha)?;
    let thresholds: Vec<usize> = range.collect();
    let (&lo, &hi) = match (thresholds.first(), thresholds.last()) {
        (Some(lo), Some(hi)) => (lo, hi),
        _ => return Err(Error::InvalidParam("empty threshold range".into())),
    };
    check_ratio_preconditions(dict, lo)?;
    check_ratio_preconditions(dict, hi)?;
    let per_sample: Vec<Vec<f64>> = (0..dict.num_samples())
        .into_par_iter()
        .map(|gi| beta_scan_linear(dict, gi, &thresholds, alpha))
        .collect::<Result<_>>()?;
    let n = per_sample.len() as f64;
    Ok(thresholds
        .iter()
        .enumerate()
        .map(|(k, &m)| (m, per_sample.iter().map(|b| b[k]).sum::<f64>() / n))
        .collect())
}

/// Smallest `M` attaining the minimum of `β̄_M` over an exhaustive scan.
pub fn btc_estimate_threshold(dict: &Dictionary, alpha: f64, range: std::ops::RangeInclusive<usize>) -> Result<ThresholdEstimate> {
    let profile = btc_beta_profile(dict, alpha, range)?;
    let threshold = argmin_profile(&profile);
    Ok(ThresholdEstimate { threshold, profile })
}

pub(crate) fn argmin_profile<K: Copy>(profile: &[(K, f64)]) -> K {
    let values: Vec<f64> = profile.iter().map(|p| p.1).collect();
    profile[argmin(&values)].0
}

/// Correlation classifier: keeps the `m` largest correlations by magnitude
/// (signed values retained) and returns the class with the largest sum.
pub fn corr_classify(dict: &Dictionary, y: ArrayView1<'_, f64>, m: usize) -> Result<usize> {
    check_linear(dict)?;
    let y = unit(y, dict.num_features())?;
    let v = dict.columns().t().dot(&y);
    let keep = top_m_select(v.view(), m, SelectionMode::Magnitude)?;
    let mut sums = vec![0.0; dict.num_classes()];
    for &i in keep.iter() {
        sums[dict.class_of(i) - 1] += v[i];
    }
    let neg: Vec<f64> = sums.iter().map(|s| -s).collect();
    Ok(argmin(&neg) + 1)
}
