use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use btc_core::data::{read_label_map_csv, read_matrix, write_label_map_csv, write_label_map_pgm};
use btc_core::ensemble::write_roc_csv;
use btc_core::kbtc::power_of_two_grid;
use btc_core::synth::random_training_mask;
use btc_core::{
    btc_classify_batch, btc_estimate_threshold, build_dictionary, classify_scene, default_tau_grid, evaluate,
    kbtc_classify_batch, kbtc_estimate_params, kernel_cache, load_dense_dataset, load_hsi_cube, mask_from_blocks,
    mutual_coherence, rejection_margin, roc_auc, roc_sweep, split_by_mask, threshold_code, BtcEnsemble, BtcParams,
    CubeNormalization, Dictionary, EnsembleConfig, Error, EvalReport, KbtcParams, KernelSpec, LabelMap, NormMode,
    PixelClassifier, ResidualVector, Result, SceneOptions, SeedSchedule, Smoothing, WlsParams,
};
use ndarray::Array2;

use crate::config::{self, resolved};
use crate::{
    ClassifierKind, ClassifyArgs, ClassifyHsiArgs, CoherenceArgs, EnsembleArgs, EstimateBtcArgs, EstimateKbtcArgs,
    NormalizationKind, RocArgs, ScheduleKind, SmoothingKind, SynthRecoveryArgs,
};

type Config = Vec<(String, String)>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn out_dir(dir: &Path) -> Result<&Path> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    Ok(dir)
}

/// Writes an artifact together with its config sidecar.
fn emit(path: PathBuf, body: String, config: &Config) -> Result<()> {
    fs::write(&path, body).map_err(io_err(&path))?;
    config::write_sidecar(&path, config)
}

fn emit_report(dir: &Path, stem: &str, report: &EvalReport, config: &Config) -> Result<()> {
    let stem = dir.join(stem);
    report.write(&stem)?;
    for ext in ["txt", "json"] {
        config::write_sidecar(&stem.with_extension(ext), config)?;
    }
    Ok(())
}

fn csv(header: &str, rows: impl IntoIterator<Item = String>) -> String {
    let mut s = format!("{header}\n");
    for r in rows {
        s.push_str(&r);
        s.push('\n');
    }
    s
}

/// Accepts `2^lo..2^hi`, or a comma-separated list of numbers and `2^k` terms.
pub fn parse_gamma_grid(spec: &str) -> Result<Vec<f64>> {
    let bad = || Error::InvalidParam(format!("invalid gamma grid {spec:?}"));
    let exponent = |t: &str| t.trim().strip_prefix("2^").and_then(|e| e.parse::<i32>().ok());
    if let Some((lo, hi)) = spec.split_once("..") {
        let (lo, hi) = (exponent(lo).ok_or_else(bad)?, exponent(hi).ok_or_else(bad)?);
        if lo > hi {
            return Err(bad());
        }
        return Ok(power_of_two_grid(lo, hi));
    }
    spec.split(',')
        .map(|t| match exponent(t) {
            Some(e) => Ok(2f64.powi(e)),
            None => t.trim().parse::<f64>().map_err(|_| bad()),
        })
        .collect()
}

fn parse_blocks(spec: &str) -> Result<Vec<(usize, usize, usize, usize)>> {
    spec.split(';')
        .filter(|b| !b.trim().is_empty())
        .map(|b| {
            let v: Vec<usize> = b
                .split(',')
                .map(|x| x.trim().parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::InvalidParam(format!("invalid block {b:?}")))?;
            match v[..] {
                [r, c, h, w] => Ok((r, c, h, w)),
                _ => Err(Error::InvalidParam(format!("block {b:?} needs row,col,height,width"))),
            }
        })
        .collect()
}

fn read_margins(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(k, l)| {
            l.trim().parse::<f64>().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: k as u64 + 1,
                msg: format!("invalid margin {l:?}"),
            })
        })
        .collect()
}

fn scan_limit(dict: &Dictionary) -> usize {
    (dict.num_features() - 1).min(dict.num_samples())
}

/// Dense class ids for evaluation; 0 stays unlabeled.
fn class_ids(dict: &Dictionary, labels: &[i64]) -> Result<Vec<usize>> {
    labels
        .iter()
        .enumerate()
        .map(|(index, &label)| match label {
            0 => Ok(0),
            l => dict.class_id_of_label(l).ok_or(Error::InvalidLabel { index, label }),
        })
        .collect()
}

fn original(dict: &Dictionary, class_id: usize) -> i64 {
    dict.original_label(class_id).expect("class ids come from the dictionary")
}

/// Classifier parameters with `M` and `γ` filled in, estimating what is missing.
#[allow(clippy::too_many_arguments)]
fn fit_classifier(
    dict: &Dictionary,
    kind: ClassifierKind,
    m: Option<usize>,
    alpha: f64,
    gamma: Option<f64>,
    grid: &str,
    stride: usize,
    config: &mut Config,
) -> Result<PixelClassifier> {
    let fitted = match kind {
        ClassifierKind::Btc => {
            let m = match m {
                Some(m) => m,
                None => btc_estimate_threshold(dict, alpha, 2..=scan_limit(dict))?.threshold,
            };
            PixelClassifier::Btc(BtcParams::new(m, alpha))
        }
        ClassifierKind::Kbtc => match (m, gamma) {
            (Some(m), Some(g)) => PixelClassifier::Kbtc(KbtcParams::new(m, alpha, KernelSpec::rbf(g))),
            _ => {
                let grid = match gamma {
                    Some(g) => vec![g],
                    None => parse_gamma_grid(grid)?,
                };
                let est = kbtc_estimate_params(dict, alpha, &grid, stride)?;
                let m = m.unwrap_or(est.threshold);
                PixelClassifier::Kbtc(KbtcParams::new(m, alpha, KernelSpec::rbf(est.gamma)))
            }
        },
    };
    match fitted {
        PixelClassifier::Btc(p) => config::set(config, "M", p.threshold),
        PixelClassifier::Kbtc(p) => {
            config::set(config, "M", p.threshold);
            if let KernelSpec::Rbf { gamma } = p.kernel {
                config::set(config, "gamma", gamma);
            }
        }
    }
    config::set(config, "alpha", alpha);
    Ok(fitted)
}

fn norm_mode(kind: ClassifierKind) -> NormMode {
    match kind {
        ClassifierKind::Btc => NormMode::L2Columns,
        ClassifierKind::Kbtc => NormMode::RangeScaled,
    }
}

fn write_predictions(dir: &Path, labels: &[i64], config: &Config) -> Result<()> {
    let body: String = labels.iter().map(|l| format!("{l}\n")).collect();
    emit(dir.join("predictions.csv"), body, config)
}

pub fn estimate_btc(a: &EstimateBtcArgs) -> Result<()> {
    let config = resolved("estimate-btc", a);
    let (x, y) = load_dense_dataset(&a.data.train, &a.data.train_labels)?;
    let dict = build_dictionary(x.view(), &y, NormMode::L2Columns)?;
    let hi = a.m_max.unwrap_or_else(|| scan_limit(&dict));
    let est = btc_estimate_threshold(&dict, a.alpha, a.m_min..=hi)?;
    let dir = out_dir(&a.output.out)?;
    emit(
        dir.join("btc_profile.csv"),
        csv("M,beta", est.profile.iter().map(|(m, b)| format!("{m},{b}"))),
        &config,
    )?;
    println!("M={}", est.threshold);
    Ok(())
}

pub fn estimate_kbtc(a: &EstimateKbtcArgs) -> Result<()> {
    let config = resolved("estimate-kbtc", a);
    let (x, y) = load_dense_dataset(&a.data.train, &a.data.train_labels)?;
    let dict = build_dictionary(x.view(), &y, NormMode::RangeScaled)?;
    let grid = parse_gamma_grid(&a.gamma_grid)?;
    let est = kbtc_estimate_params(&dict, a.alpha, &grid, a.stride)?;
    let dir = out_dir(&a.output.out)?;
    emit(
        dir.join("gamma_profile.csv"),
        csv("gamma,beta", est.gamma_profile.iter().map(|(g, b)| format!("{g},{b}"))),
        &config,
    )?;
    emit(
        dir.join("threshold_profile.csv"),
        csv("M,beta", est.threshold_profile.iter().map(|(m, b)| format!("{m},{b}"))),
        &config,
    )?;
    println!("gamma={} M={}", est.gamma, est.threshold);
    Ok(())
}

fn residuals_for(dict: &Dictionary, test: &Array2<f64>, classifier: &PixelClassifier) -> Result<Vec<ResidualVector>> {
    match classifier {
        PixelClassifier::Btc(p) => btc_classify_batch(dict, test.view(), p),
        PixelClassifier::Kbtc(p) => {
            let cache = kernel_cache(dict, p.kernel)?;
            let mut prepared = Array2::zeros(test.raw_dim());
            for (mut dst, src) in prepared.rows_mut().into_iter().zip(test.rows()) {
                dst.assign(&dict.prepare_sample(src)?);
            }
            kbtc_classify_batch(dict, prepared.view(), p, &cache)
        }
    }
}

fn load_test(path: &Path, labels: Option<&Path>) -> Result<(Array2<f64>, Option<Vec<i64>>)> {
    match labels {
        Some(l) => load_dense_dataset(path, l).map(|(x, y)| (x, Some(y))),
        None => Ok((read_matrix(path)?, None)),
    }
}

pub fn classify(a: &ClassifyArgs) -> Result<()> {
    let start = Instant::now();
    let mut config = resolved("classify", a);
    let (x, y) = load_dense_dataset(&a.train.train, &a.train.train_labels)?;
    let (test, truth) = load_test(&a.test.test, a.test.test_labels.as_deref())?;
    let dict = build_dictionary(x.view(), &y, norm_mode(a.classifier))?;
    let alpha = a.alpha.unwrap_or(match a.classifier {
        ClassifierKind::Btc => BtcParams::DEFAULT_ALPHA,
        ClassifierKind::Kbtc => KbtcParams::DEFAULT_ALPHA,
    });
    let classifier = fit_classifier(&dict, a.classifier, a.m, alpha, a.gamma, &a.gamma_grid, a.stride, &mut config)?;
    let residuals = residuals_for(&dict, &test, &classifier)?;
    let predicted: Vec<usize> = residuals.iter().map(ResidualVector::predicted_class).collect();
    let dir = out_dir(&a.output.out)?;
    let labels: Vec<i64> = predicted.iter().map(|&k| original(&dict, k)).collect();
    write_predictions(dir, &labels, &config)?;
    if let Some(truth) = truth {
        let report = evaluate(&predicted, &class_ids(&dict, &truth)?)?
            .with_elapsed(start.elapsed().as_secs_f64())
            .with_config(config.clone());
        emit_report(dir, "report", &report, &config)?;
        println!("OA={:.4} AA={:.4} kappa={:.4}", report.oa, report.aa, report.kappa);
    }
    Ok(())
}

fn training_mask(a: &ClassifyHsiArgs, gt: &LabelMap) -> Result<LabelMap> {
    match (&a.train_mask, &a.train_blocks, a.train_per_class) {
        (Some(p), None, None) => read_label_map_csv(p),
        (None, Some(b), None) => Ok(mask_from_blocks(gt, &parse_blocks(b)?)),
        (None, None, Some(n)) => Ok(random_training_mask(gt, n, a.seed)),
        _ => Err(Error::InvalidParam(
            "give exactly one of --train-mask, --train-blocks, --train-per-class".into(),
        )),
    }
}

fn write_map(dir: &Path, stem: &str, map: &LabelMap, classes: usize, config: &Config) -> Result<()> {
    let csv_path = dir.join(format!("{stem}.csv"));
    write_label_map_csv(map, &csv_path)?;
    config::write_sidecar(&csv_path, config)?;
    let pgm = dir.join(format!("{stem}.pgm"));
    let gray = dir.join(format!("{stem}_gray.csv"));
    write_label_map_pgm(map, &pgm, &gray, classes)?;
    config::write_sidecar(&pgm, config)?;
    config::write_sidecar(&gray, config)
}

pub fn classify_hsi(a: &ClassifyHsiArgs) -> Result<()> {
    let start = Instant::now();
    let mut config = resolved("classify-hsi", a);
    let cube = load_hsi_cube(&a.header, &a.raw)?;
    let gt = read_label_map_csv(&a.gt)?;
    let mask = training_mask(a, &gt)?;
    let split = split_by_mask(&cube, &gt, &mask)?;
    let dict = build_dictionary(split.train.view(), &split.train_labels, norm_mode(a.classifier))?;
    let alpha = a.alpha.unwrap_or(match a.classifier {
        ClassifierKind::Btc => BtcParams::SPATIAL_ALPHA,
        ClassifierKind::Kbtc => KbtcParams::DEFAULT_ALPHA,
    });
    let classifier = fit_classifier(&dict, a.classifier, a.m, alpha, a.gamma, &a.gamma_grid, a.stride, &mut config)?;
    let smoothing = match a.smoothing {
        SmoothingKind::None => Smoothing::None,
        SmoothingKind::Box => Smoothing::Box { window: a.window },
        SmoothingKind::Wls => Smoothing::Wls(WlsParams {
            lambda: a.lambda,
            alpha: a.wls_alpha,
            eps: a.wls_eps,
            cg_tol: a.cg_tol,
            cg_max_iter: a.cg_max_iter,
            ..WlsParams::default()
        }),
    };
    let options = SceneOptions {
        normalization: match a.normalization {
            NormalizationKind::Global => CubeNormalization::Global,
            NormalizationKind::PerLayer => CubeNormalization::PerLayer,
        },
        mask: a.mask,
        smoothing,
    };
    let scene = classify_scene(&cube, &dict, &classifier, &options)?;
    let dir = out_dir(&a.output.out)?;
    let classes = dict.original_labels().iter().copied().max().unwrap_or(0).max(0) as usize;
    write_map(dir, "pixelwise", &scene.pixelwise, classes, &config)?;
    write_map(dir, "smoothed", &scene.smoothed, classes, &config)?;

    let truth = class_ids(&dict, &split.test_labels)?;
    let elapsed = start.elapsed().as_secs_f64();
    for (stem, map) in [("report_pixelwise", &scene.pixelwise), ("report_smoothed", &scene.smoothed)] {
        let predicted: Vec<usize> = split
            .test_coords
            .iter()
            .map(|&(r, c)| map.get(r, c) as i64)
            .collect::<Vec<_>>()
            .iter()
            .enumerate()
            .map(|(index, &label)| dict.class_id_of_label(label).ok_or(Error::InvalidLabel { index, label }))
            .collect::<Result<_>>()?;
        let report = evaluate(&predicted, &truth)?.with_elapsed(elapsed).with_config(config.clone());
        emit_report(dir, stem, &report, &config)?;
        println!("{stem}: OA={:.4} AA={:.4} kappa={:.4}", report.oa, report.aa, report.kappa);
    }
    Ok(())
}

pub fn ensemble(a: &EnsembleArgs) -> Result<()> {
    let start = Instant::now();
    let config = resolved("ensemble", a);
    let (x, y) = load_dense_dataset(&a.train.train, &a.train.train_labels)?;
    let (test, truth) = load_test(&a.test.test, a.test.test_labels.as_deref())?;
    let ens = BtcEnsemble::new(
        x.view(),
        &y,
        EnsembleConfig {
            members: a.members,
            target_dim: a.dim,
            sparsity: a.sparsity,
            seed: a.seed,
            schedule: match a.schedule {
                ScheduleKind::Sequential => SeedSchedule::Sequential,
                ScheduleKind::Repeated => SeedSchedule::Repeated,
            },
            params: BtcParams::new(a.m, a.alpha),
        },
    )?;
    let results = ens.classify_batch(test.view())?;
    let margins: Vec<f64> = results.iter().map(|(_, eps)| rejection_margin(eps)).collect::<Result<_>>()?;
    let predicted: Vec<usize> = results.iter().map(|r| r.0).collect();
    let label = |k: usize| ens.original_label(k).expect("class ids come from the ensemble");
    let labels: Vec<i64> = predicted.iter().map(|&k| label(k)).collect();
    let dir = out_dir(&a.output.out)?;
    write_predictions(dir, &labels, &config)?;
    emit(
        dir.join("margins.csv"),
        csv(
            "margin,accepted",
            margins.iter().map(|&m| format!("{m},{}", u8::from(m >= a.tau))),
        ),
        &config,
    )?;
    let rejected = margins.iter().filter(|&&m| m < a.tau).count();
    if let Some(truth) = truth {
        let truth: Vec<usize> = truth
            .iter()
            .enumerate()
            .map(|(index, &l)| match l {
                0 => Ok(0),
                _ => (1..=ens.num_classes())
                    .find(|&k| label(k) == l)
                    .ok_or(Error::InvalidLabel { index, label: l }),
            })
            .collect::<Result<_>>()?;
        let report = evaluate(&predicted, &truth)?
            .with_elapsed(start.elapsed().as_secs_f64())
            .with_config(config.clone());
        emit_report(dir, "report", &report, &config)?;
        println!("OA={:.4} AA={:.4} kappa={:.4} rejected={rejected}", report.oa, report.aa, report.kappa);
    } else {
        println!("rejected={rejected}");
    }
    Ok(())
}

pub fn roc(a: &RocArgs) -> Result<()> {
    let config = resolved("roc", a);
    let points = roc_sweep(&read_margins(&a.valid)?, &read_margins(&a.invalid)?, &default_tau_grid())?;
    let dir = out_dir(&a.output.out)?;
    let path = dir.join("roc.csv");
    write_roc_csv(&points, &path)?;
    config::write_sidecar(&path, &config)?;
    println!("AUC={:.6}", roc_auc(&points));
    Ok(())
}

pub fn synth_recovery(a: &SynthRecoveryArgs) -> Result<()> {
    let config = resolved("synth-recovery", a);
    let s = btc_core::synth::sparse_recovery(a.n, a.b, a.k, a.seed)?;
    let code = threshold_code(s.matrix.view(), s.observation.view(), a.m, a.alpha)?;
    let x = code.to_dense();
    let dir = out_dir(&a.output.out)?;
    emit(
        dir.join("recovery.csv"),
        csv("true,recovered", s.coefficients.iter().zip(&x).map(|(t, r)| format!("{t},{r}"))),
        &config,
    )?;
    let hits = s.support.iter().filter(|i| code.support.contains(i)).count();
    let diff = &x - &s.coefficients;
    let rel = diff.dot(&diff).sqrt() / s.coefficients.dot(&s.coefficients).sqrt();
    println!("support_hits={hits}/{} rel_err={rel:.4e}", a.k);
    Ok(())
}

pub fn coherence(a: &CoherenceArgs) -> Result<()> {
    let (x, y) = load_dense_dataset(&a.data.train, &a.data.train_labels)?;
    let dict = build_dictionary(x.view(), &y, NormMode::L2Columns)?;
    println!("mu={}", mutual_coherence(&dict)?);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_grid_forms() {
        assert_eq!(parse_gamma_grid("2^-2..2^1").unwrap(), vec![2.0, 1.0, 0.5, 0.25]);
        assert_eq!(parse_gamma_grid("0.5, 2^3").unwrap(), vec![0.5, 8.0]);
        assert!(parse_gamma_grid("2^1..2^-1").is_err());
        assert!(parse_gamma_grid("x").is_err());
    }

    #[test]
    fn block_specs() {
        assert_eq!(parse_blocks("0,0,2,3; 4,5,1,1").unwrap(), vec![(0, 0, 2, 3), (4, 5, 1, 1)]);
        assert!(parse_blocks("1,2,3").is_err());
    }
}
