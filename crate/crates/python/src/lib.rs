//! Python bindings. Matrices cross the boundary as nested lists (NumPy arrays
//! are accepted wherever a sequence is); samples are rows.

use btc_core::{
    box_smooth as core_box_smooth, btc_classify as core_btc_classify, btc_classify_batch,
    btc_estimate_threshold as core_btc_estimate, build_dictionary, classify_scene as core_classify_scene,
    default_gamma_grid, evaluate as core_evaluate, kbtc_classify as core_kbtc_classify, kbtc_estimate_params,
    kernel_cache, mutual_coherence as core_mutual_coherence, rejection_margin as core_rejection_margin,
    roc_auc as core_roc_auc, roc_sweep as core_roc_sweep, default_tau_grid, synth::sparse_recovery, threshold_code,
    wls_smooth as core_wls_smooth, BtcEnsemble, BtcParams, Dictionary, EnsembleConfig, Error, ErrorKind, HsiCube,
    KbtcParams, KernelSpec, NormMode, PixelClassifier, ResidualVector, RocPoint, SceneOptions, SeedSchedule,
    Smoothing, WlsParams,
};
use ndarray::{Array2, Array3};
use pyo3::exceptions::{PyArithmeticError, PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

type RocCurve = (Vec<(f64, f64, f64)>, f64);
type LabelGrids = (Vec<Vec<usize>>, Vec<Vec<usize>>);

fn err(e: Error) -> PyErr {
    match e.kind() {
        ErrorKind::Io => PyOSError::new_err(e.to_string()),
        ErrorKind::Input => PyValueError::new_err(e.to_string()),
        ErrorKind::Numerical => PyArithmeticError::new_err(e.to_string()),
    }
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    let width = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != width) {
        return Err(PyValueError::new_err("rows must all have the same length"));
    }
    let n = rows.len();
    Array2::from_shape_vec((n, width), rows.into_iter().flatten().collect())
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

fn to_lists(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn label_of(dict: &Dictionary, eps: &ResidualVector) -> i64 {
    dict.original_label(eps.predicted_class()).expect("class ids come from the dictionary")
}

/// Training samples grouped by class. `norm` is `"l2"` (linear classifier)
/// or `"range"` (kernel classifier).
#[pyclass(name = "Dictionary", frozen)]
struct PyDictionary {
    inner: Dictionary,
}

#[pymethods]
impl PyDictionary {
    #[new]
    #[pyo3(signature = (samples, labels, norm = "l2"))]
    fn new(samples: Vec<Vec<f64>>, labels: Vec<i64>, norm: &str) -> PyResult<Self> {
        let mode = match norm {
            "l2" => NormMode::L2Columns,
            "range" => NormMode::RangeScaled,
            other => return Err(PyValueError::new_err(format!("unknown norm {other:?}, expected 'l2' or 'range'"))),
        };
        let x = matrix(samples)?;
        Ok(Self {
            inner: build_dictionary(x.view(), &labels, mode).map_err(err)?,
        })
    }

    #[getter]
    fn num_features(&self) -> usize {
        self.inner.num_features()
    }

    #[getter]
    fn num_samples(&self) -> usize {
        self.inner.num_samples()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }

    /// Original labels in class-id order.
    #[getter]
    fn labels(&self) -> Vec<i64> {
        self.inner.original_labels().to_vec()
    }

    fn __repr__(&self) -> String {
        format!(
            "Dictionary(features={}, samples={}, classes={})",
            self.inner.num_features(),
            self.inner.num_samples(),
            self.inner.num_classes()
        )
    }
}

/// Returns `(label, residuals)`.
#[pyfunction]
#[pyo3(signature = (dictionary, y, m, alpha = 0.01))]
fn btc_classify(dictionary: &PyDictionary, y: Vec<f64>, m: usize, alpha: f64) -> PyResult<(i64, Vec<f64>)> {
    let d = &dictionary.inner;
    let (eps, _) = core_btc_classify(d, ndarray::aview1(&y), &BtcParams::new(m, alpha)).map_err(err)?;
    Ok((label_of(d, &eps), eps.0))
}

/// Labels for every row of `samples`.
#[pyfunction]
#[pyo3(signature = (dictionary, samples, m, alpha = 0.01))]
fn btc_predict(py: Python<'_>, dictionary: &PyDictionary, samples: Vec<Vec<f64>>, m: usize, alpha: f64) -> PyResult<Vec<i64>> {
    let d = &dictionary.inner;
    let x = matrix(samples)?;
    let eps = py
        .detach(|| btc_classify_batch(d, x.view(), &BtcParams::new(m, alpha)))
        .map_err(err)?;
    Ok(eps.iter().map(|e| label_of(d, e)).collect())
}

/// Returns `(M, [(M, beta), ...])`. The scan defaults to `2..=min(B-1, N)`.
#[pyfunction]
#[pyo3(signature = (dictionary, alpha = 0.01, m_min = 2, m_max = None))]
fn btc_estimate_threshold(
    py: Python<'_>,
    dictionary: &PyDictionary,
    alpha: f64,
    m_min: usize,
    m_max: Option<usize>,
) -> PyResult<(usize, Vec<(usize, f64)>)> {
    let d = &dictionary.inner;
    let hi = m_max.unwrap_or((d.num_features() - 1).min(d.num_samples()));
    let est = py.detach(|| core_btc_estimate(d, alpha, m_min..=hi)).map_err(err)?;
    Ok((est.threshold, est.profile))
}

/// Returns a dict with `gamma`, `M`, `gamma_profile` and `threshold_profile`.
#[pyfunction]
#[pyo3(signature = (dictionary, alpha = 1e-9, gamma_grid = None, stride = 1))]
fn kbtc_estimate<'py>(
    py: Python<'py>,
    dictionary: &PyDictionary,
    alpha: f64,
    gamma_grid: Option<Vec<f64>>,
    stride: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let d = &dictionary.inner;
    let grid = gamma_grid.unwrap_or_else(default_gamma_grid);
    let est = py.detach(|| kbtc_estimate_params(d, alpha, &grid, stride)).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("gamma", est.gamma)?;
    out.set_item("M", est.threshold)?;
    out.set_item("gamma_profile", est.gamma_profile)?;
    out.set_item("threshold_profile", est.threshold_profile)?;
    Ok(out)
}

/// RBF-kernel classification of a raw sample; the dictionary must use `norm="range"`.
#[pyfunction]
#[pyo3(signature = (dictionary, y, m, gamma, alpha = 1e-9))]
fn kbtc_classify(dictionary: &PyDictionary, y: Vec<f64>, m: usize, gamma: f64, alpha: f64) -> PyResult<(i64, Vec<f64>)> {
    let d = &dictionary.inner;
    let spec = KernelSpec::rbf(gamma);
    let cache = kernel_cache(d, spec).map_err(err)?;
    let y = d.prepare_sample(ndarray::aview1(&y)).map_err(err)?;
    let (eps, _) = core_kbtc_classify(d, y.view(), &KbtcParams::new(m, alpha, spec), &cache).map_err(err)?;
    Ok((label_of(d, &eps), eps.0))
}

/// Random-projection ensemble of linear classifiers.
#[pyclass(name = "Ensemble", frozen)]
struct PyEnsemble {
    inner: BtcEnsemble,
}

#[pymethods]
impl PyEnsemble {
    #[new]
    #[pyo3(signature = (samples, labels, members, target_dim, m, alpha = 0.01, sparsity = 3, seed = 0, repeated_seed = false))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        py: Python<'_>,
        samples: Vec<Vec<f64>>,
        labels: Vec<i64>,
        members: usize,
        target_dim: usize,
        m: usize,
        alpha: f64,
        sparsity: u32,
        seed: u64,
        repeated_seed: bool,
    ) -> PyResult<Self> {
        let x = matrix(samples)?;
        let config = EnsembleConfig {
            members,
            target_dim,
            sparsity,
            seed,
            schedule: if repeated_seed { SeedSchedule::Repeated } else { SeedSchedule::Sequential },
            params: BtcParams::new(m, alpha),
        };
        let inner = py.detach(|| BtcEnsemble::new(x.view(), &labels, config)).map_err(err)?;
        Ok(Self { inner })
    }

    /// Returns `(label, fused residuals, margin)`.
    fn classify(&self, y: Vec<f64>) -> PyResult<(i64, Vec<f64>, f64)> {
        let (k, eps) = self.inner.classify(ndarray::aview1(&y)).map_err(err)?;
        let margin = core_rejection_margin(&eps).map_err(err)?;
        let label = self.inner.original_label(k).expect("class ids come from the ensemble");
        Ok((label, eps.0, margin))
    }

    /// Returns `(labels, margins)` for every row.
    fn predict(&self, py: Python<'_>, samples: Vec<Vec<f64>>) -> PyResult<(Vec<i64>, Vec<f64>)> {
        let x = matrix(samples)?;
        let results = py.detach(|| self.inner.classify_batch(x.view())).map_err(err)?;
        let mut labels = Vec::with_capacity(results.len());
        let mut margins = Vec::with_capacity(results.len());
        for (k, eps) in &results {
            labels.push(self.inner.original_label(*k).expect("class ids come from the ensemble"));
            margins.push(core_rejection_margin(eps).map_err(err)?);
        }
        Ok((labels, margins))
    }
}

/// `1 - min / second` of a residual vector.
#[pyfunction]
fn rejection_margin(residuals: Vec<f64>) -> PyResult<f64> {
    core_rejection_margin(&ResidualVector(residuals)).map_err(err)
}

/// Returns `(points, auc)` with points as `(tau, tpr, fpr)`.
#[pyfunction]
#[pyo3(signature = (valid, invalid, taus = None))]
fn roc(valid: Vec<f64>, invalid: Vec<f64>, taus: Option<Vec<f64>>) -> PyResult<RocCurve> {
    let taus = taus.unwrap_or_else(default_tau_grid);
    let points: Vec<RocPoint> = core_roc_sweep(&valid, &invalid, &taus).map_err(err)?;
    let auc = core_roc_auc(&points);
    Ok((points.iter().map(|p| (p.tau, p.tpr, p.fpr)).collect(), auc))
}

/// Overall accuracy, average accuracy, kappa and the confusion matrix.
/// Labels are `1..=C`; truth 0 marks unlabeled samples.
#[pyfunction]
fn evaluate<'py>(py: Python<'py>, predicted: Vec<usize>, truth: Vec<usize>) -> PyResult<Bound<'py, PyDict>> {
    let r = core_evaluate(&predicted, &truth).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("oa", r.oa)?;
    out.set_item("aa", r.aa)?;
    out.set_item("kappa", r.kappa)?;
    out.set_item("confusion", r.confusion)?;
    out.set_item("per_class_acc", r.per_class_acc)?;
    Ok(out)
}

#[pyfunction]
fn mutual_coherence(dictionary: &PyDictionary) -> PyResult<f64> {
    core_mutual_coherence(&dictionary.inner).map_err(err)
}

/// Recovers a random `k`-sparse vector from `b` Gaussian measurements.
/// Returns `(true, recovered)` coefficient lists.
#[pyfunction]
#[pyo3(signature = (n = 512, b = 170, k = 15, seed = 0, m = 120, alpha = 1e-4))]
fn sparse_recovery_demo(n: usize, b: usize, k: usize, seed: u64, m: usize, alpha: f64) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let s = sparse_recovery(n, b, k, seed).map_err(err)?;
    let code = threshold_code(s.matrix.view(), s.observation.view(), m, alpha).map_err(err)?;
    Ok((s.coefficients.to_vec(), code.to_dense().to_vec()))
}

#[pyfunction]
fn box_smooth(map: Vec<Vec<f64>>, window: usize) -> PyResult<Vec<Vec<f64>>> {
    let m = matrix(map)?;
    Ok(to_lists(&core_box_smooth(m.view(), window).map_err(err)?))
}

/// Edge-preserving smoothing of `map` guided by `guidance`.
#[pyfunction]
#[pyo3(signature = (map, guidance, lam = 0.4, alpha = 0.9, eps = 1e-4))]
fn wls_smooth(map: Vec<Vec<f64>>, guidance: Vec<Vec<f64>>, lam: f64, alpha: f64, eps: f64) -> PyResult<Vec<Vec<f64>>> {
    let (m, g) = (matrix(map)?, matrix(guidance)?);
    let params = WlsParams {
        lambda: lam,
        alpha,
        eps,
        ..WlsParams::default()
    };
    Ok(to_lists(&core_wls_smooth(m.view(), g.view(), &params).map_err(err)?))
}

/// Classifies every pixel of an `h × w × bands` cube with the linear
/// classifier, then smooths the residual maps (`"wls"`, `"box"` or `"none"`).
/// Returns `(pixelwise, smoothed)` label maps.
#[pyfunction]
#[pyo3(signature = (cube, dictionary, m, alpha = 1e-10, smoothing = "wls", window = 5, mask = true))]
#[allow(clippy::too_many_arguments)]
fn classify_scene(
    py: Python<'_>,
    cube: Vec<Vec<Vec<f64>>>,
    dictionary: &PyDictionary,
    m: usize,
    alpha: f64,
    smoothing: &str,
    window: usize,
    mask: bool,
) -> PyResult<LabelGrids> {
    let h = cube.len();
    let w = cube.first().map_or(0, Vec::len);
    let b = cube.first().and_then(|r| r.first()).map_or(0, Vec::len);
    if cube.iter().any(|r| r.len() != w || r.iter().any(|p| p.len() != b)) {
        return Err(PyValueError::new_err("cube must be a regular h × w × bands nest"));
    }
    let data = Array3::from_shape_vec((h, w, b), cube.into_iter().flatten().flatten().collect())
        .map_err(|e| PyValueError::new_err(e.to_string()))?;
    let hsi = HsiCube::from_hwb(data.view()).map_err(err)?;
    let smoothing = match smoothing {
        "wls" => Smoothing::Wls(WlsParams::default()),
        "box" => Smoothing::Box { window },
        "none" => Smoothing::None,
        other => return Err(PyValueError::new_err(format!("unknown smoothing {other:?}"))),
    };
    let options = SceneOptions {
        mask,
        smoothing,
        ..SceneOptions::default()
    };
    let classifier = PixelClassifier::Btc(BtcParams::new(m, alpha));
    let d = &dictionary.inner;
    let scene = py
        .detach(|| core_classify_scene(&hsi, d, &classifier, &options))
        .map_err(err)?;
    let grid = |map: &btc_core::LabelMap| -> Vec<Vec<usize>> {
        (0..map.height()).map(|r| (0..map.width()).map(|c| map.get(r, c)).collect()).collect()
    };
    Ok((grid(&scene.pixelwise), grid(&scene.smoothed)))
}

#[pymodule]
#[pyo3(name = "btc")]
fn btc_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDictionary>()?;
    m.add_class::<PyEnsemble>()?;
    m.add_function(wrap_pyfunction!(btc_classify, m)?)?;
    m.add_function(wrap_pyfunction!(btc_predict, m)?)?;
    m.add_function(wrap_pyfunction!(btc_estimate_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(kbtc_estimate, m)?)?;
    m.add_function(wrap_pyfunction!(kbtc_classify, m)?)?;
    m.add_function(wrap_pyfunction!(rejection_margin, m)?)?;
    m.add_function(wrap_pyfunction!(roc, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(mutual_coherence, m)?)?;
    m.add_function(wrap_pyfunction!(sparse_recovery_demo, m)?)?;
    m.add_function(wrap_pyfunction!(box_smooth, m)?)?;
    m.add_function(wrap_pyfunction!(wls_smooth, m)?)?;
    m.add_function(wrap_pyfunction!(classify_scene, m)?)?;
    Ok(())
}
