//! Confusion matrix, accuracy indexes and report serialization.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Classification accuracy summary. Confusion rows are truth, columns are
/// predictions; class `k` lives at index `k - 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub oa: f64,
    pub aa: f64,
    pub kappa: f64,
    pub confusion: Vec<Vec<u64>>,
    pub per_class_acc: Vec<Option<f64>>,
    pub elapsed_s: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub config: Vec<(String, String)>,
}

/// Compares predicted against true labels. Truth entries equal to 0 are
/// unlabeled and skipped. Classes without truth samples are left out of AA.
pub fn evaluate(predicted: &[usize], truth: &[usize]) -> Result<EvalReport> {
    if predicted.len() != truth.len() {
        return Err(Error::SizeMismatch {
            expected: truth.len(),
            found: predicted.len(),
        });
    }
    if predicted.is_empty() {
        return Err(Error::Dimension("nothing to evaluate".into()));
    }
    let pairs: Vec<(usize, usize)> = truth
        .iter()
        .zip(predicted)
        .filter(|(&t, _)| t != 0)
        .map(|(&t, &p)| (t, p))
        .collect();
    if pairs.is_empty() {
        return Err(Error::NoLabeledPixels);
    }
    if let Some((index, _)) = pairs.iter().enumerate().find(|(_, (_, p))| *p == 0) {
        return Err(Error::InvalidLabel { index, label: 0 });
    }
    let c = pairs.iter().map(|&(t, p)| t.max(p)).max().unwrap_or(0);
    let mut confusion = vec![vec![0u64; c]; c];
    for &(t, p) in &pairs {
        confusion[t - 1][p - 1] += 1;
    }
    let total = pairs.len() as f64;
    let diag: u64 = (0..c).map(|k| confusion[k][k]).sum();
    let oa = diag as f64 / total;

    let rows: Vec<u64> = confusion.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<u64> = (0..c).map(|k| confusion.iter().map(|r| r[k]).sum()).collect();
    let per_class_acc: Vec<Option<f64>> = (0..c)
        .map(|k| (rows[k] > 0).then(|| confusion[k][k] as f64 / rows[k] as f64))
        .collect();
    let present: Vec<f64> = per_class_acc.iter().flatten().copied().collect();
    let aa = present.iter().sum::<f64>() / present.len() as f64;

    let pe = rows
        .iter()
        .zip(&cols)
        .map(|(&r, &k)| r as f64 * k as f64)
        .sum::<f64>()
        / (total * total);
    let kappa = if pe == 1.0 {
        if oa == 1.0 {
            1.0
        } else {
            return Err(Error::Numerical("kappa undefined: chance agreement is 1".into()));
        }
    } else {
        (oa - pe) / (1.0 - pe)
    };
    Ok(EvalReport {
        oa,
        aa,
        kappa,
        confusion,
        per_class_acc,
        elapsed_s: 0.0,
        config: Vec::new(),
    })
}

impl EvalReport {
    pub fn with_elapsed(mut self, seconds: f64) -> Self {
        self.elapsed_s = seconds;
        self
    }

    pub fn with_config(mut self, config: Vec<(String, String)>) -> Self {
        self.config = config;
        self
    }

    /// Flat `key=value` lines; matrices and vectors are comma/semicolon lists.
    pub fn to_key_value(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "oa={}", self.oa);
        let _ = writeln!(s, "aa={}", self.aa);
        let _ = writeln!(s, "kappa={}", self.kappa);
        let rows: Vec<String> = self
            .confusion
            .iter()
            .map(|r| r.iter().map(u64::to_string).collect::<Vec<_>>().join(","))
            .collect();
        let _ = writeln!(s, "confusion={}", rows.join(";"));
        let acc: Vec<String> = self
            .per_class_acc
            .iter()
            .map(|a| a.map_or_else(|| "na".to_string(), |v| v.to_string()))
            .collect();
        let _ = writeln!(s, "per_class_acc={}", acc.join(","));
        let _ = writeln!(s, "elapsed_s={}", self.elapsed_s);
        for (k, v) in &self.config {
            let _ = writeln!(s, "config.{k}={v}");
        }
        s
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Numerical(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            path: "<json>".into(),
            line: e.line() as u64,
            msg: e.to_string(),
        })
    }

    /// Writes `<stem>.txt` and `<stem>.json` next to each other.
    pub fn write(&self, stem: &Path) -> Result<()> {
        let txt = stem.with_extension("txt");
        std::fs::write(&txt, self.to_key_value()).map_err(|e| Error::io(&txt, e))?;
        let json = stem.with_extension("json");
        std::fs::write(&json, self.to_json()?).map_err(|e| Error::io(&json, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_agreement() {
        let r = evaluate(&[1, 2, 3, 1], &[1, 2, 3, 1]).unwrap();
        assert_eq!((r.oa, r.aa, r.kappa), (1.0, 1.0, 1.0));
    }

    #[test]
    fn chance_level() {
        let r = evaluate(&[1, 2, 1, 2], &[1, 1, 2, 2]).unwrap();
        assert_eq!((r.oa, r.aa, r.kappa), (0.5, 0.5, 0.0));
        assert_eq!(r.confusion, vec![vec![1, 1], vec![1, 1]]);
    }

    #[test]
    fn unlabeled_truth_skipped_and_empty_class_out_of_aa() {
        let r = evaluate(&[1, 3, 2, 3], &[1, 0, 3, 3]).unwrap();
        assert_eq!(r.confusion.iter().map(|r| r.iter().sum::<u64>()).collect::<Vec<_>>(), vec![1, 0, 2]);
        assert_eq!(r.per_class_acc, vec![Some(1.0), None, Some(0.5)]);
        assert_eq!(r.aa, 0.75);
    }

    #[test]
    fn errors() {
        assert!(evaluate(&[1], &[1, 2]).is_err());
        assert!(evaluate(&[], &[]).is_err());
        assert!(matches!(evaluate(&[1, 2], &[0, 0]), Err(Error::NoLabeledPixels)));
        // single class, all wrong is impossible; all right gives pe = 1 and kappa 1
        assert_eq!(evaluate(&[1, 1], &[1, 1]).unwrap().kappa, 1.0);
    }

    #[test]
    fn serialization_fields() {
        let r = evaluate(&[1, 2], &[1, 2]).unwrap().with_elapsed(0.5);
        let kv = r.to_key_value();
        assert!(kv.contains("oa=1\n") && kv.contains("confusion=1,0;0,1\n") && kv.contains("elapsed_s=0.5"));
        let json: serde_json::Value = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        for key in ["oa", "aa", "kappa", "confusion", "per_class_acc", "elapsed_s"] {
            assert!(json.get(key).is_some(), "{key}");
        }
        assert_eq!(EvalReport::from_json(&r.to_json().unwrap()).unwrap(), r);
    }
}
