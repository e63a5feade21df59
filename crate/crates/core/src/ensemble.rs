//! Random-projection ensembles of linear classifiers and residual-based
//! rejection of samples that belong to no known class.

use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::btc::{btc_classify, BtcParams, ResidualVector};
use crate::data::{group_by_class, Dictionary, Grouped, NormMode};
use crate::error::{Error, Result};

/// Very sparse random projection `R ∈ R^{B×m}`: entries `+√S`, `0`, `−√S`
/// with probabilities `1/(2S)`, `1 − 1/S`, `1/(2S)`, divided by `√m`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseProjection {
    rows: usize,
    cols: usize,
    sparsity: u32,
    seed: u64,
    entries: Array2<f64>,
}

pub fn make_sparse_projection(rows: usize, cols: usize, sparsity: u32, seed: u64) -> Result<SparseProjection> {
    if rows < 1 || rows >= cols {
        return Err(Error::InvalidParam(format!(
            "projection needs 1 ≤ B < m, got B={rows}, m={cols}"
        )));
    }
    if sparsity < 1 {
        return Err(Error::InvalidParam("sparsity S must be ≥ 1".into()));
    }
    let s = sparsity as f64;
    let value = s.sqrt() / (cols as f64).sqrt();
    let half = 1.0 / (2.0 * s);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entries = Array2::from_shape_simple_fn((rows, cols), || {
        let u: f64 = rng.random();
        if u < half {
            value
        } else if u < 2.0 * half {
            -value
        } else {
            0.0
        }
    });
    Ok(SparseProjection {
        rows,
        cols,
        sparsity,
        seed,
        entries,
    })
}

impl SparseProjection {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn sparsity(&self) -> u32 {
        self.sparsity
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }

    pub fn project(&self, x: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        if x.len() != self.cols {
            return Err(Error::Dimension(format!(
                "vector has {} entries, projection expects {}",
                x.len(),
                self.cols
            )));
        }
        Ok(self.entries.dot(&x))
    }

    /// Projects every column of `a`.
    pub fn project_columns(&self, a: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if a.nrows() != self.cols {
            return Err(Error::Dimension(format!(
                "matrix has {} rows, projection expects {}",
                a.nrows(),
                self.cols
            )));
        }
        Ok(self.entries.dot(&a))
    }
}

/// How member seeds are derived from the base seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SeedSchedule {
    /// Member `i` (1-based) uses `seed + i`.
    #[default]
    Sequential,
    /// Every member uses `seed`; only useful for testing the fusion.
    Repeated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub members: usize,
    pub target_dim: usize,
    pub sparsity: u32,
    pub seed: u64,
    pub schedule: SeedSchedule,
    pub params: BtcParams,
}

impl EnsembleConfig {
    fn member_seed(&self, i: usize) -> u64 {
        match self.schedule {
            SeedSchedule::Sequential => self.seed.wrapping_add(i as u64),
            SeedSchedule::Repeated => self.seed,
        }
    }
}

/// `n` linear classifiers, each on its own random projection of the raw
/// training samples. Residuals are fused by their mean.
#[derive(Debug, Clone)]
pub struct BtcEnsemble {
    config: EnsembleConfig,
    members: Vec<(SparseProjection, Dictionary)>,
}

impl BtcEnsemble {
    /// `samples` holds one raw training sample per row (`N × m`).
    pub fn new(samples: ArrayView2<'_, f64>, labels: &[i64], config: EnsembleConfig) -> Result<Self> {
        if config.members < 1 {
            return Err(Error::InvalidParam("ensemble needs at least one member".into()));
        }
        let grouped = group_by_class(samples, labels)?;
        let members = (1..=config.members)
            .into_par_iter()
            .map(|i| {
                let proj = make_sparse_projection(
                    config.target_dim,
                    samples.ncols(),
                    config.sparsity,
                    config.member_seed(i),
                )?;
                let phi = proj.project_columns(grouped.columns.view())?;
                let dict = Dictionary::from_grouped(
                    Grouped {
                        columns: phi,
                        classes: grouped.classes.clone(),
                        original_labels: grouped.original_labels.clone(),
                    },
                    NormMode::L2Columns,
                    None,
                )?;
                config.params.validate(dict.num_features(), dict.num_samples())?;
                Ok((proj, dict))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { config, members })
    }

    pub fn config(&self) -> &EnsembleConfig {
        &self.config
    }

    pub fn members(&self) -> &[(SparseProjection, Dictionary)] {
        &self.members
    }

    pub fn num_classes(&self) -> usize {
        self.members[0].1.num_classes()
    }

    /// Original label of a dense class id.
    pub fn original_label(&self, class_id: usize) -> Option<i64> {
        self.members[0].1.original_label(class_id)
    }

    /// Per-member residual vectors for a raw sample.
    pub fn member_residuals(&self, y: ArrayView1<'_, f64>) -> Result<Vec<ResidualVector>> {
        self.members
            .iter()
            .map(|(proj, dict)| {
                let yp = proj.project(y)?;
                btc_classify(dict, yp.view(), &self.config.params).map(|(eps, _)| eps)
            })
            .collect()
    }

    /// Fused class and mean residual vector for a raw sample.
    pub fn classify(&self, y: ArrayView1<'_, f64>) -> Result<(usize, ResidualVector)> {
        let fused = fuse_residuals(&self.member_residuals(y)?)?;
        Ok((fused.predicted_class(), fused))
    }

    pub fn classify_batch(&self, samples: ArrayView2<'_, f64>) -> Result<Vec<(usize, ResidualVector)>> {
        (0..samples.nrows())
            .into_par_iter()
            .map(|i| self.classify(samples.row(i)))
            .collect()
    }
}

/// Mean of residual vectors. Each class sums its values in ascending order,
/// so the result does not depend on member order.
pub fn fuse_residuals(members: &[ResidualVector]) -> Result<ResidualVector> {
    let first = members
        .first()
        .ok_or_else(|| Error::InvalidParam("nothing to fuse".into()))?;
    let c = first.num_classes();
    if members.iter().any(|m| m.num_classes() != c) {
        return Err(Error::Dimension("residual vectors differ in class count".into()));
    }
    let n = members.len() as f64;
    let mut column = Vec::with_capacity(members.len());
    let fused = (0..c)
        .map(|j| {
            column.clear();
            column.extend(members.iter().map(|m| m.values()[j]));
            column.sort_by(f64::total_cmp);
            column.iter().sum::<f64>() / n
        })
        .collect();
    Ok(ResidualVector(fused))
}

/// One-shot ensemble classification of a single raw sample.
pub fn ensemble_classify(
    samples: ArrayView2<'_, f64>,
    labels: &[i64],
    y: ArrayView1<'_, f64>,
    config: EnsembleConfig,
) -> Result<(usize, ResidualVector)> {
    BtcEnsemble::new(samples, labels, config)?.classify(y)
}

/// Margin between the best and runner-up residuals, `1 − ε_min/ε_second`.
/// Lies in `[0, 1)`: ties give 0, and a perfect match against a nonzero
/// runner-up is reported just below 1.
pub fn rejection_margin(eps: &ResidualVector) -> Result<f64> {
    if eps.num_classes() < 2 {
        return Err(Error::InvalidParam("rejection margin needs at least two classes".into()));
    }
    let mut sorted = eps.values().to_vec();
    sorted.sort_by(f64::total_cmp);
    let (best, second) = (sorted[0], sorted[1]);
    if second <= 0.0 {
        return Ok(0.0);
    }
    Ok((1.0 - best / second).clamp(0.0, 1.0 - 1e-15))
}

/// Accept/reject outcome for a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RejectionDecision {
    pub margin: f64,
    pub tau: f64,
    pub accepted: bool,
}

pub fn decide_rejection(eps: &ResidualVector, tau: f64) -> Result<RejectionDecision> {
    let margin = rejection_margin(eps)?;
    Ok(RejectionDecision {
        margin,
        tau,
        accepted: margin >= tau,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub tau: f64,
    pub tpr: f64,
    pub fpr: f64,
}

/// 1001 thresholds strictly inside `(0, 1)`.
pub fn default_tau_grid() -> Vec<f64> {
    (1..=1001).map(|k| k as f64 / 1002.0).collect()
}

/// Sweeps the rejection threshold. A positive is a sample accepted as valid:
/// TPR counts valid samples with margin ≥ τ, FPR counts invalid ones.
pub fn roc_sweep(valid: &[f64], invalid: &[f64], taus: &[f64]) -> Result<Vec<RocPoint>> {
    if valid.is_empty() || invalid.is_empty() {
        return Err(Error::InvalidParam("ROC needs both valid and invalid margins".into()));
    }
    let rate = |set: &[f64], tau: f64| set.iter().filter(|&&m| m >= tau).count() as f64 / set.len() as f64;
    Ok(taus
        .iter()
        .map(|&tau| RocPoint {
            tau,
            tpr: rate(valid, tau),
            fpr: rate(invalid, tau),
        })
        .collect())
}

/// Trapezoidal area under the curve, anchored at (0,0) and (1,1).
pub fn roc_auc(points: &[RocPoint]) -> f64 {
    let mut pts: Vec<(f64, f64)> = points.iter().map(|p| (p.fpr, p.tpr)).collect();
    pts.push((0.0, 0.0));
    pts.push((1.0, 1.0));
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum()
}

pub fn write_roc_csv(points: &[RocPoint], path: &Path) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(f, "tau,tpr,fpr").map_err(io)?;
    for p in points {
        writeln!(f, "{},{},{}", p.tau, p.tpr, p.fpr).map_err(io)?;
    }
    f.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_projection_has_no_zeros() {
        let p = make_sparse_projection(10, 50, 1, 3).unwrap();
        let v = 1.0 / 50f64.sqrt();
        assert!(p.entries().iter().all(|&e| (e.abs() - v).abs() < 1e-15));
    }

    #[test]
    fn projection_is_deterministic() {
        let a = make_sparse_projection(20, 100, 3, 42).unwrap();
        let b = make_sparse_projection(20, 100, 3, 42).unwrap();
        assert_eq!(a, b);
        let c = make_sparse_projection(20, 100, 3, 43).unwrap();
        assert_ne!(a.entries(), c.entries());
    }

    #[test]
    fn projection_dims_checked() {
        assert!(make_sparse_projection(10, 10, 3, 0).is_err());
        assert!(make_sparse_projection(0, 10, 3, 0).is_err());
        assert!(make_sparse_projection(5, 10, 0, 0).is_err());
    }

    #[test]
    fn margin_examples() {
        assert!((rejection_margin(&ResidualVector(vec![0.1, 0.5, 0.9])).unwrap() - 0.8).abs() < 1e-15);
        assert_eq!(rejection_margin(&ResidualVector(vec![0.4, 0.4, 0.4])).unwrap(), 0.0);
        assert_eq!(rejection_margin(&ResidualVector(vec![0.0, 0.3])).unwrap(), 1.0 - 1e-15);
        assert_eq!(rejection_margin(&ResidualVector(vec![0.0, 0.0, 1.0])).unwrap(), 0.0);
        assert!(rejection_margin(&ResidualVector(vec![0.3])).is_err());
        let d = decide_rejection(&ResidualVector(vec![0.1, 0.5]), 0.8).unwrap();
        assert!(d.accepted);
        let d = decide_rejection(&ResidualVector(vec![0.1, 0.5]), 0.81).unwrap();
        assert!(!d.accepted);
    }

    #[test]
    fn roc_endpoints() {
        let valid = [0.9, 0.8, 0.3];
        let invalid = [0.1, 0.2, 0.5];
        let pts = roc_sweep(&valid, &invalid, &[0.0, 0.25, 0.999999]).unwrap();
        assert_eq!((pts[0].tpr, pts[0].fpr), (1.0, 1.0));
        assert_eq!((pts[1].tpr, pts[1].fpr), (1.0, 1.0 / 3.0));
        assert_eq!((pts[2].tpr, pts[2].fpr), (0.0, 0.0));
        assert!(roc_sweep(&[], &invalid, &[0.5]).is_err());
    }

    #[test]
    fn fusion_is_order_free() {
        let a = ResidualVector(vec![0.1, 0.7, 0.3]);
        let b = ResidualVector(vec![0.2, 0.1, 0.9]);
        let c = ResidualVector(vec![1e-17, 0.3, 1.0]);
        let f1 = fuse_residuals(&[a.clone(), b.clone(), c.clone()]).unwrap();
        let f2 = fuse_residuals(&[c, a, b]).unwrap();
        assert_eq!(f1, f2);
        assert!(fuse_residuals(&[]).is_err());
    }
}
