//! Kernel basic thresholding classifier.
//!
//! Correlations, the regularized solve and the class residuals are all
//! expressed through a kernel, so the classifier works in the kernel's
//! feature space without forming it. The Gram matrix of the training columns
//! is computed once and the `M × M` blocks are sliced out of it.

use ndarray::{Array1, Array2, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::btc::{
    argmin_profile, identification_ratio, scan_prefixes, validate_alpha, validate_threshold,
    ResidualVector, SparseCode,
};
use crate::data::Dictionary;
use crate::error::{Error, Result};
use crate::linalg::{rank_all, top_m_select, top_m_select_excluding, Cholesky, IndexSet, SelectionMode};

/// Radicands below this are treated as a numerical failure instead of clamped.
const RADICAND_FLOOR: f64 = -1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum KernelSpec {
    /// `exp(−γ‖x − y‖²)`
    Rbf { gamma: f64 },
    /// `xᵀy`
    Linear,
}

impl KernelSpec {
    pub fn rbf(gamma: f64) -> Self {
        KernelSpec::Rbf { gamma }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Rbf { gamma } if !(gamma.is_finite() && gamma > 0.0) => Err(Error::InvalidParam(
                format!("RBF gamma must be finite and > 0, got {gamma}"),
            )),
            _ => Ok(()),
        }
    }

    pub fn eval(&self, x: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>) -> f64 {
        match *self {
            KernelSpec::Rbf { gamma } => {
                let d2: f64 = x.iter().zip(y.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
                (-gamma * d2).exp()
            }
            KernelSpec::Linear => x.dot(&y),
        }
    }

    /// RBF values are positive, so they are ranked as-is; linear correlations
    /// can be negative and are ranked by magnitude.
    pub fn selection_mode(&self) -> SelectionMode {
        match self {
            KernelSpec::Rbf { .. } => SelectionMode::Raw,
            KernelSpec::Linear => SelectionMode::Magnitude,
        }
    }
}

/// `K(A, A)` for a dictionary under a fixed kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelCache {
    gram: Array2<f64>,
    spec: KernelSpec,
}

impl KernelCache {
    pub fn gram(&self) -> &Array2<f64> {
        &self.gram
    }

    pub fn spec(&self) -> KernelSpec {
        self.spec
    }

    fn check(&self, dict: &Dictionary, spec: &KernelSpec) -> Result<()> {
        if self.spec != *spec {
            return Err(Error::InvalidParam(format!(
                "kernel cache built for {:?}, classifier uses {:?}",
                self.spec, spec
            )));
        }
        if self.gram.nrows() != dict.num_samples() {
            return Err(Error::Dimension(format!(
                "kernel cache is {}x{}, dictionary has {} columns",
                self.gram.nrows(),
                self.gram.ncols(),
                dict.num_samples()
            )));
        }
        Ok(())
    }
}

/// Computes every pairwise kernel value between dictionary columns.
pub fn kernel_cache(dict: &Dictionary, spec: KernelSpec) -> Result<KernelCache> {
    spec.validate()?;
    let n = dict.num_samples();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (i..n)
                .map(|j| match spec {
                    KernelSpec::Rbf { .. } if i == j => 1.0,
                    _ => spec.eval(dict.column(i), dict.column(j)),
                })
                .collect()
        })
        .collect();
    let mut gram = Array2::zeros((n, n));
    for (i, row) in rows.iter().enumerate() {
        for (off, &v) in row.iter().enumerate() {
            let j = i + off;
            if !v.is_finite() {
                return Err(Error::Numerical(format!("kernel value ({i},{j}) is not finite")));
            }
            gram[[i, j]] = v;
            gram[[j, i]] = v;
        }
    }
    Ok(KernelCache { gram, spec })
}

/// `K(A(i), y)` for every column.
pub fn kernel_vector(dict: &Dictionary, y: ArrayView1<'_, f64>, spec: KernelSpec) -> Result<Array1<f64>> {
    spec.validate()?;
    if y.len() != dict.num_features() {
        return Err(Error::Dimension(format!(
            "sample has {} features, dictionary has {}",
            y.len(),
            dict.num_features()
        )));
    }
    let v = Array1::from_iter(dict.columns().columns().into_iter().map(|a| spec.eval(a, y)));
    if let Some(i) = v.iter().position(|k| !k.is_finite()) {
        return Err(Error::Numerical(format!("kernel value for column {i} is not finite")));
    }
    Ok(v)
}

/// Threshold `M`, regularization `α` and kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KbtcParams {
    pub threshold: usize,
    pub alpha: f64,
    pub kernel: KernelSpec,
}

impl KbtcParams {
    pub const DEFAULT_ALPHA: f64 = 1e-9;

    pub fn new(threshold: usize, alpha: f64, kernel: KernelSpec) -> Self {
        Self {
            threshold,
            alpha,
            kernel,
        }
    }

    pub fn validate(&self, features: usize, samples: usize) -> Result<()> {
        validate_threshold(self.threshold, features, samples)?;
        validate_alpha(self.alpha)?;
        self.kernel.validate()
    }
}

fn solve_kernel_code(cache: &KernelCache, kv: &Array1<f64>, support: &[usize], alpha: f64) -> Result<Vec<f64>> {
    let mut chol = Cholesky::new();
    let mut row = Vec::with_capacity(support.len());
    for (k, &p) in support.iter().enumerate() {
        row.clear();
        row.extend(support[..k].iter().map(|&q| cache.gram[[p, q]]));
        chol.push(&row, cache.gram[[p, p]] + alpha)?;
    }
    let b: Vec<f64> = support.iter().map(|&p| kv[p]).collect();
    chol.solve(&b)
}

/// `ε(j) = sqrt(K(y,y) − 2x_jᵀK(A_j,y) + x_jᵀK(A_j,A_j)x_j)`.
fn kernel_class_residuals(
    dict: &Dictionary,
    cache: &KernelCache,
    kyy: f64,
    kv: &Array1<f64>,
    support: &[usize],
    x: &[f64],
) -> Result<ResidualVector> {
    let c = dict.num_classes();
    let mut cross = vec![0.0; c];
    let mut quad = vec![0.0; c];
    for (a, (&p, &xp)) in support.iter().zip(x).enumerate() {
        let cls = dict.class_of(p) - 1;
        cross[cls] += xp * kv[p];
        for (&q, &xq) in support[..a].iter().zip(x) {
            if dict.class_of(q) - 1 == cls {
                quad[cls] += 2.0 * xp * xq * cache.gram[[p, q]];
            }
        }
        quad[cls] += xp * xp * cache.gram[[p, p]];
    }
    let mut eps = Vec::with_capacity(c);
    for j in 0..c {
        let rad = kyy - 2.0 * cross[j] + quad[j];
        if rad < RADICAND_FLOOR {
            return Err(Error::Numerical(format!(
                "negative kernel residual radicand {rad:e} for class {}",
                j + 1
            )));
        }
        eps.push(rad.max(0.0).sqrt());
    }
    Ok(ResidualVector(eps))
}

/// Solve and residual stages over a caller-chosen support. `y` must already live in the
/// dictionary's feature space (see [`Dictionary::prepare_sample`]).
pub fn kbtc_residuals_on_support(
    dict: &Dictionary,
    y: ArrayView1<'_, f64>,
    support: &IndexSet,
    params: &KbtcParams,
    cache: &KernelCache,
) -> Result<(ResidualVector, SparseCode)> {
    cache.check(dict, &params.kernel)?;
    if let Some(&bad) = support.iter().find(|&&i| i >= dict.num_samples()) {
        return Err(Error::InvalidParam(format!("support index {bad} out of range")));
    }
    let kv = kernel_vector(dict, y, params.kernel)?;
    let kyy = params.kernel.eval(y, y);
    let x = solve_kernel_code(cache, &kv, support, params.alpha)?;
    let eps = kernel_class_residuals(dict, cache, kyy, &kv, support, &x)?;
    Ok((
        eps,
        SparseCode {
            support: support.clone(),
            coefficients: x,
            ambient: dict.num_samples(),
        },
    ))
}

/// Classifies `y`, which must already be scaled like the dictionary.
pub fn kbtc_classify(
    dict: &Dictionary,
    y: ArrayView1<'_, f64>,
    params: &KbtcParams,
    cache: &KernelCache,
) -> Result<(ResidualVector, SparseCode)> {
    params.validate(dict.num_features(), dict.num_samples())?;
    cache.check(dict, &params.kernel)?;
    let kv = kernel_vector(dict, y, params.kernel)?;
    let kyy = params.kernel.eval(y, y);
    let support = top_m_select(kv.view(), params.threshold, params.kernel.selection_mode())?;
    let x = solve_kernel_code(cache, &kv, &support, params.alpha)?;
    let eps = kernel_class_residuals(dict, cache, kyy, &kv, &support, &x)?;
    Ok((
        eps,
        SparseCode {
            support,
            coefficients: x,
            ambient: dict.num_samples(),
        },
    ))
}

/// Classifies every row of `samples` in parallel.
pub fn kbtc_classify_batch(
    dict: &Dictionary,
    samples: ndarray::ArrayView2<'_, f64>,
    params: &KbtcParams,
    cache: &KernelCache,
) -> Result<Vec<ResidualVector>> {
    (0..samples.nrows())
        .into_par_iter()
        .map(|i| kbtc_classify(dict, samples.row(i), params, cache).map(|(eps, _)| eps))
        .collect()
}

/// Alternative residual `ε(j) = |K(y,y) − x_jᵀK(A_j,y)|` for a code produced
/// by [`kbtc_classify`].
pub fn kbtc_residual_alt(
    dict: &Dictionary,
    y: ArrayView1<'_, f64>,
    code: &SparseCode,
    cache: &KernelCache,
) -> Result<ResidualVector> {
    let spec = cache.spec();
    cache.check(dict, &spec)?;
    if code.ambient != dict.num_samples() || code.support.len() != code.coefficients.len() {
        return Err(Error::Dimension("sparse code does not match the dictionary".into()));
    }
    let kv = kernel_vector(dict, y, spec)?;
    let kyy = spec.eval(y, y);
    let mut cross = vec![0.0; dict.num_classes()];
    for (&p, &xp) in code.support.iter().zip(&code.coefficients) {
        cross[dict.class_of(p) - 1] += xp * kv[p];
    }
    Ok(ResidualVector(cross.into_iter().map(|c| (kyy - c).abs()).collect()))
}

fn check_kernel_ratio(dict: &Dictionary, m: usize) -> Result<()> {
    if dict.num_classes() < 2 {
        return Err(Error::InvalidParam("identification ratio needs at least two classes".into()));
    }
    if m < 2 {
        return Err(Error::InvalidParam(format!("threshold M={m} must be ≥ 2 here")));
    }
    validate_threshold(m, dict.num_features(), dict.num_samples())
}

/// Kernel identification ratio `β(γ, M, a_i)` of one training column.
pub fn kbtc_beta_sample(
    dict: &Dictionary,
    class_id: usize,
    sample_idx: usize,
    params: &KbtcParams,
    cache: &KernelCache,
) -> Result<f64> {
    check_kernel_ratio(dict, params.threshold)?;
    validate_alpha(params.alpha)?;
    cache.check(dict, &params.kernel)?;
    let part = dict
        .class(class_id)
        .ok_or_else(|| Error::InvalidParam(format!("unknown class {class_id}")))?;
    if sample_idx >= part.count {
        return Err(Error::InvalidParam(format!(
            "sample {sample_idx} outside class {class_id}"
        )));
    }
    let gi = part.start + sample_idx;
    let kv = cache.gram.column(gi).to_owned();
    let kyy = cache.gram[[gi, gi]];
    let support = top_m_select_excluding(kv.view(), params.threshold, gi, params.kernel.selection_mode())?;
    let x = solve_kernel_code(cache, &kv, &support, params.alpha)?;
    let eps = kernel_class_residuals(dict, cache, kyy, &kv, &support, &x)?;
    identification_ratio(&eps, class_id)
}

/// `β(γ, M, a_gi)` for each `M` in `thresholds` (ascending, `M ≥ 1`).
/// `M = 1` leaves an empty support, where every residual equals `sqrt(K(a,a))`.
fn beta_scan_kernel(
    dict: &Dictionary,
    cache: &KernelCache,
    gi: usize,
    thresholds: &[usize],
    alpha: f64,
) -> Result<Vec<f64>> {
    let own = dict.class_of(gi);
    let kv = cache.gram.column(gi).to_owned();
    let kyy = cache.gram[[gi, gi]];
    let ranking: Vec<usize> = rank_all(kv.view(), cache.spec.selection_mode())
        .into_iter()
        .filter(|&i| i != gi)
        .collect();
    let mut out = Vec::with_capacity(thresholds.len());
    let mut next = 0;
    while next < thresholds.len() && thresholds[next] <= 1 {
        let eps = kernel_class_residuals(dict, cache, kyy, &kv, &[], &[])?;
        out.push(identification_ratio(&eps, own)?);
        next += 1;
    }
    let max_m = thresholds.iter().copied().max().unwrap_or(0);
    scan_prefixes(
        &ranking,
        max_m.saturating_sub(1),
        alpha,
        |p, q| cache.gram[[p, q]],
        |p| kv[p],
        |support, x| {
            while next < thresholds.len() && thresholds[next] - 1 == support.len() {
                let eps = kernel_class_residuals(dict, cache, kyy, &kv, support, x)?;
                out.push(identification_ratio(&eps, own)?);
                next += 1;
            }
            Ok(())
        },
    )?;
    Ok(out)
}

/// `β̄(γ, M)` for each `M` in `thresholds`, averaged over all columns.
pub fn kbtc_threshold_profile(
    dict: &Dictionary,
    alpha: f64,
    cache: &KernelCache,
    thresholds: &[usize],
) -> Result<Vec<(usize, f64)>> {
    validate_alpha(alpha)?;
    let spec = cache.spec();
    cache.check(dict, &spec)?;
    if dict.num_classes() < 2 {
        return Err(Error::InvalidParam("identification ratio needs at least two classes".into()));
    }
    if thresholds.is_empty() {
        return Err(Error::InvalidParam("empty threshold list".into()));
    }
    if thresholds.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParam("thresholds must be strictly ascending".into()));
    }
    for &m in thresholds {
        validate_threshold(m, dict.num_features(), dict.num_samples())?;
    }
    let per_sample: Vec<Vec<f64>> = (0..dict.num_samples())
        .into_par_iter()
        .map(|gi| beta_scan_kernel(dict, cache, gi, thresholds, alpha))
        .collect::<Result<_>>()?;
    let n = per_sample.len() as f64;
    Ok(thresholds
        .iter()
        .enumerate()
        .map(|(k, &m)| (m, per_sample.iter().map(|b| b[k]).sum::<f64>() / n))
        .collect())
}

/// One point of the kernel-width scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaPoint {
    pub gamma: f64,
    /// `β̄(γ)`, the mean of `β̄(γ, M)` over the scanned thresholds.
    pub beta: f64,
    /// `β̄(γ, M)` per scanned threshold.
    pub thresholds: Vec<(usize, f64)>,
}

/// Powers of two `2^lo ..= 2^hi`, largest first.
pub fn power_of_two_grid(lo: i32, hi: i32) -> Vec<f64> {
    (lo..=hi).rev().map(|e| 2f64.powi(e)).collect()
}

/// Default kernel-width grid `2^1 … 2^-10`.
pub fn default_gamma_grid() -> Vec<f64> {
    power_of_two_grid(-10, 1)
}

fn scan_thresholds(dict: &Dictionary, stride: usize) -> Result<Vec<usize>> {
    if stride == 0 {
        return Err(Error::InvalidParam("threshold stride must be ≥ 1".into()));
    }
    let hi = (dict.num_features() - 1).min(dict.num_samples());
    if hi < 1 {
        return Err(Error::InvalidParam("dictionary too small for a threshold scan".into()));
    }
    Ok((1..=hi).step_by(stride).collect())
}

/// `β̄(γ)` for every `γ` in `grid`: `β(γ, M, a_n)` averaged over
/// `M = 1..B−1` (every `stride`-th) and over all columns. One kernel cache
/// is built per grid point and dropped afterwards.
pub fn kbtc_gamma_profile(dict: &Dictionary, alpha: f64, grid: &[f64], stride: usize) -> Result<Vec<GammaPoint>> {
    if grid.is_empty() {
        return Err(Error::InvalidParam("empty gamma grid".into()));
    }
    let thresholds = scan_thresholds(dict, stride)?;
    grid.iter()
        .map(|&gamma| {
            let cache = kernel_cache(dict, KernelSpec::rbf(gamma))?;
            let profile = kbtc_threshold_profile(dict, alpha, &cache, &thresholds)?;
            let beta = profile.iter().map(|p| p.1).sum::<f64>() / profile.len() as f64;
            Ok(GammaPoint {
                gamma,
                beta,
                thresholds: profile,
            })
        })
        .collect()
}

/// Estimated kernel width and threshold, with both profiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KbtcEstimate {
    pub gamma: f64,
    pub threshold: usize,
    /// `(γ, β̄(γ))`
    pub gamma_profile: Vec<(f64, f64)>,
    /// `(M, β̄(γ̂, M))` for `M = 2..B−1`
    pub threshold_profile: Vec<(usize, f64)>,
}

/// Picks `γ̂` minimizing `β̄(γ)` over the grid, then `M̂` minimizing
/// `β̄(γ̂, M)` over `M = 2..B−1` (smallest `M` on ties).
pub fn kbtc_estimate_params(dict: &Dictionary, alpha: f64, grid: &[f64], stride: usize) -> Result<KbtcEstimate> {
    let points = kbtc_gamma_profile(dict, alpha, grid, stride)?;
    let gamma_profile: Vec<(f64, f64)> = points.iter().map(|p| (p.gamma, p.beta)).collect();
    let best = points
        .iter()
        .position(|p| p.gamma == argmin_profile(&gamma_profile))
        .expect("argmin comes from the profile");
    let hi = (dict.num_features() - 1).min(dict.num_samples());
    if hi < 2 {
        return Err(Error::InvalidParam(format!(
            "threshold scan 2..={hi} is empty (B={}, N={})",
            dict.num_features(),
            dict.num_samples()
        )));
    }
    let threshold_profile: Vec<(usize, f64)> = if stride == 1 {
        points[best].thresholds.iter().copied().filter(|&(m, _)| m >= 2).collect()
    } else {
        let cache = kernel_cache(dict, KernelSpec::rbf(points[best].gamma))?;
        let thresholds: Vec<usize> = (2..=hi).collect();
        kbtc_threshold_profile(dict, alpha, &cache, &thresholds)?
    };
    Ok(KbtcEstimate {
        gamma: points[best].gamma,
        threshold: argmin_profile(&threshold_profile),
        gamma_profile,
        threshold_profile,
    })
}
