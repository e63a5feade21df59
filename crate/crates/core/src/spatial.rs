//! Spatial-spectral classification of image scenes: per-pixel residual maps
//! are smoothed and the class of each pixel is re-decided from them.

use ndarray::{Array2, Array3, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::btc::{argmin, btc_classify, BtcParams, ResidualVector};
use crate::data::{Dictionary, HsiCube, LabelMap, NormMode};
use crate::error::{Error, Result};
use crate::kbtc::{kbtc_classify, kernel_cache, KbtcParams};
use crate::linalg::pca_first_component;

/// Per-pixel class residuals, `height × width × C`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualCube {
    data: Array3<f64>,
    normalized: bool,
}

impl ResidualCube {
    pub fn new(data: Array3<f64>, normalized: bool) -> Result<Self> {
        if normalized && data.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::InvalidParam("normalized cube has entries outside [0, 1]".into()));
        }
        Ok(Self { data, normalized })
    }

    pub fn height(&self) -> usize {
        self.data.dim().0
    }

    pub fn width(&self) -> usize {
        self.data.dim().1
    }

    pub fn num_classes(&self) -> usize {
        self.data.dim().2
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    /// Residual map of a 1-based class id.
    pub fn layer(&self, class_id: usize) -> ArrayView2<'_, f64> {
        self.data.index_axis(Axis(2), class_id - 1)
    }

    pub fn residuals(&self, row: usize, col: usize) -> ResidualVector {
        ResidualVector(self.data.slice(ndarray::s![row, col, ..]).to_vec())
    }

    fn from_layers(layers: Vec<Array2<f64>>, normalized: bool) -> Self {
        let views: Vec<_> = layers.iter().map(|l| l.view()).collect();
        let data = ndarray::stack(Axis(2), &views)
            .expect("layers share a shape")
            .as_standard_layout()
            .into_owned();
        Self { data, normalized }
    }
}

/// Pixel classifier used to fill a residual cube.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PixelClassifier {
    Btc(BtcParams),
    Kbtc(KbtcParams),
}

/// Min-max range used to bring residuals into `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum CubeNormalization {
    #[default]
    Global,
    PerLayer,
}

fn min_max_in_place<D: ndarray::Dimension>(mut values: ndarray::ArrayViewMut<'_, f64, D>) {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    let span = hi - lo;
    values.mapv_inplace(|v| if span > 0.0 { ((v - lo) / span).clamp(0.0, 1.0) } else { 0.0 });
}

/// Classifies every pixel and stacks the residual vectors into a cube
/// normalized to `[0, 1]`. Also returns the pixel-wise map of dense class ids.
pub fn build_residual_cube(
    cube: &HsiCube,
    dict: &Dictionary,
    classifier: &PixelClassifier,
    normalization: CubeNormalization,
) -> Result<(ResidualCube, LabelMap)> {
    let (h, w, c) = (cube.height(), cube.width(), dict.num_classes());
    if cube.bands() != dict.num_features() {
        return Err(Error::Dimension(format!(
            "cube has {} bands, dictionary has {} features",
            cube.bands(),
            dict.num_features()
        )));
    }
    let pixels = match dict.scaling() {
        Some(s) => cube.scaled(s)?.pixels(),
        None => cube.pixels(),
    };
    let classify: Box<dyn Fn(usize) -> Result<ResidualVector> + Sync> = match classifier {
        PixelClassifier::Btc(p) => {
            if dict.norm_mode() != NormMode::L2Columns {
                return Err(Error::InvalidParam("BTC needs an L2-normalized dictionary".into()));
            }
            p.validate(dict.num_features(), dict.num_samples())?;
            let p = *p;
            Box::new(move |i| btc_classify(dict, pixels.row(i), &p).map(|(eps, _)| eps))
        }
        PixelClassifier::Kbtc(p) => {
            p.validate(dict.num_features(), dict.num_samples())?;
            let cache = kernel_cache(dict, p.kernel)?;
            let p = *p;
            Box::new(move |i| kbtc_classify(dict, pixels.row(i), &p, &cache).map(|(eps, _)| eps))
        }
    };
    let residuals: Vec<ResidualVector> = (0..h * w)
        .into_par_iter()
        .map(|i| {
            classify(i).map_err(|e| Error::Pixel {
                row: i / w,
                col: i % w,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;

    let mut data = Array3::zeros((h, w, c));
    let mut labels = Vec::with_capacity(h * w);
    for (i, eps) in residuals.iter().enumerate() {
        data.slice_mut(ndarray::s![i / w, i % w, ..])
            .iter_mut()
            .zip(eps.values())
            .for_each(|(d, &e)| *d = e);
        labels.push(eps.predicted_class());
    }
    match normalization {
        CubeNormalization::Global => min_max_in_place(data.view_mut()),
        CubeNormalization::PerLayer => {
            for layer in data.axis_iter_mut(Axis(2)) {
                min_max_in_place(layer);
            }
        }
    }
    Ok((ResidualCube { data, normalized: true }, LabelMap::new(h, w, labels)?))
}

/// Sets layer `i` to 1 wherever the pixel-wise label differs from `i`.
pub fn mask_by_classmap(cube: &ResidualCube, classmap: &LabelMap) -> Result<ResidualCube> {
    if !cube.normalized {
        return Err(Error::InvalidParam("masking needs a normalized residual cube".into()));
    }
    if (classmap.height(), classmap.width()) != (cube.height(), cube.width()) {
        return Err(Error::Dimension(format!(
            "class map is {}×{}, cube is {}×{}",
            classmap.height(),
            classmap.width(),
            cube.height(),
            cube.width()
        )));
    }
    let mut data = cube.data.clone();
    for ((r, c, k), v) in data.indexed_iter_mut() {
        if classmap.get(r, c) != k + 1 {
            *v = 1.0;
        }
    }
    Ok(ResidualCube { data, normalized: true })
}

/// Mean over an odd `window × window` neighbourhood with edge replication.
pub fn box_smooth(map: ArrayView2<'_, f64>, window: usize) -> Result<Array2<f64>> {
    if window == 0 || window.is_multiple_of(2) {
        return Err(Error::InvalidParam(format!("box window must be odd and ≥ 1, got {window}")));
    }
    if window == 1 {
        return Ok(map.to_owned());
    }
    let (h, w) = map.dim();
    let r = (window / 2) as isize;
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let inv = 1.0 / window as f64;
    let mut rows = Array2::zeros((h, w));
    for i in 0..h {
        for j in 0..w {
            rows[[i, j]] = (-r..=r).map(|d| map[[i, clamp(j as isize + d, w)]]).sum::<f64>() * inv;
        }
    }
    let mut out = Array2::zeros((h, w));
    for i in 0..h {
        for j in 0..w {
            out[[i, j]] = (-r..=r).map(|d| rows[[clamp(i as isize + d, h), j]]).sum::<f64>() * inv;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Preconditioner {
    Jacobi,
    #[default]
    IncompleteCholesky,
}

/// Edge-preserving smoothing parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WlsParams {
    /// Smoothing degree λ.
    pub lambda: f64,
    /// Sharpening exponent on guidance gradients.
    pub alpha: f64,
    /// Gradient floor.
    pub eps: f64,
    pub cg_tol: f64,
    pub cg_max_iter: usize,
    pub preconditioner: Preconditioner,
}

impl Default for WlsParams {
    fn default() -> Self {
        Self {
            lambda: 0.4,
            alpha: 0.9,
            eps: 1e-4,
            cg_tol: 1e-5,
            cg_max_iter: 2000,
            preconditioner: Preconditioner::IncompleteCholesky,
        }
    }
}

impl WlsParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParam(format!("WLS lambda must be ≥ 0, got {}", self.lambda)));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidParam(format!("WLS alpha must be > 0, got {}", self.alpha)));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::InvalidParam(format!("WLS eps must be > 0, got {}", self.eps)));
        }
        if self.cg_tol.is_nan() || self.cg_tol <= 0.0 || self.cg_max_iter == 0 {
            return Err(Error::InvalidParam("CG tolerance and iteration cap must be positive".into()));
        }
        Ok(())
    }
}

/// `I + λL` on a 4-neighbour grid, stored as scaled edge weights.
/// `east[i]` couples pixel `i` with `i + 1`, `south[i]` with `i + width`.
struct GridSystem {
    width: usize,
    east: Vec<f64>,
    south: Vec<f64>,
    diag: Vec<f64>,
}

impl GridSystem {
    fn new(guidance: ArrayView2<'_, f64>, p: &WlsParams) -> Self {
        let (h, w) = guidance.dim();
        let n = h * w;
        let weight = |a: f64, b: f64| p.lambda / ((a - b).abs().powf(p.alpha) + p.eps);
        let mut east = vec![0.0; n];
        let mut south = vec![0.0; n];
        let mut diag = vec![1.0; n];
        for r in 0..h {
            for c in 0..w {
                let i = r * w + c;
                if c + 1 < w {
                    let e = weight(guidance[[r, c]], guidance[[r, c + 1]]);
                    east[i] = e;
                    diag[i] += e;
                    diag[i + 1] += e;
                }
                if r + 1 < h {
                    let s = weight(guidance[[r, c]], guidance[[r + 1, c]]);
                    south[i] = s;
                    diag[i] += s;
                    diag[i + w] += s;
                }
            }
        }
        Self { width: w, east, south, diag }
    }

    /// `x + λ Σ w (x_i − x_j)`; exact zero Laplacian on constants.
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(x);
        let w = self.width;
        for i in 0..x.len() {
            let e = self.east[i];
            if e != 0.0 {
                let d = e * (x[i] - x[i + 1]);
                out[i] += d;
                out[i + 1] -= d;
            }
            let s = self.south[i];
            if s != 0.0 {
                let d = s * (x[i] - x[i + w]);
                out[i] += d;
                out[i + w] -= d;
            }
        }
    }

    /// Diagonal of the zero-fill incomplete factorization `(D + L) D⁻¹ (D + Lᵀ)`.
    fn ic0_pivots(&self) -> Result<Vec<f64>> {
        let w = self.width;
        let mut d = self.diag.clone();
        for i in 0..d.len() {
            if i >= 1 && self.east[i - 1] != 0.0 {
                d[i] -= self.east[i - 1] * self.east[i - 1] / d[i - 1];
            }
            if i >= w && self.south[i - w] != 0.0 {
                d[i] -= self.south[i - w] * self.south[i - w] / d[i - w];
            }
            if d[i].is_nan() || d[i] <= 0.0 {
                return Err(Error::NotPositiveDefinite { pivot: i, value: d[i] });
            }
        }
        Ok(d)
    }

    fn ic0_solve(&self, d: &[f64], r: &[f64], z: &mut [f64]) {
        let w = self.width;
        let n = r.len();
        for i in 0..n {
            let mut v = r[i];
            if i >= 1 {
                v += self.east[i - 1] * z[i - 1];
            }
            if i >= w {
                v += self.south[i - w] * z[i - w];
            }
            z[i] = v / d[i];
        }
        for i in (0..n).rev() {
            let mut v = 0.0;
            if i + 1 < n {
                v += self.east[i] * z[i + 1];
            }
            if i + w < n {
                v += self.south[i] * z[i + w];
            }
            z[i] += v / d[i];
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `(I + λL_g) u = map` by preconditioned conjugate gradient, where
/// `L_g` is the 4-neighbour Laplacian weighted by `1/(|Δg|^α + eps)` on the
/// guidance image `g`, with natural boundary conditions.
pub fn wls_smooth(map: ArrayView2<'_, f64>, guidance: ArrayView2<'_, f64>, params: &WlsParams) -> Result<Array2<f64>> {
    params.validate()?;
    if map.dim() != guidance.dim() {
        return Err(Error::Dimension(format!(
            "map is {:?}, guidance is {:?}",
            map.dim(),
            guidance.dim()
        )));
    }
    let (h, w) = map.dim();
    let b: Vec<f64> = map.iter().copied().collect();
    let b_norm = dot(&b, &b).sqrt();
    if params.lambda == 0.0 || b_norm == 0.0 || h * w == 0 {
        return Ok(map.to_owned());
    }
    let sys = GridSystem::new(guidance, params);
    let pivots = match params.preconditioner {
        Preconditioner::IncompleteCholesky => Some(sys.ic0_pivots()?),
        Preconditioner::Jacobi => None,
    };
    let precondition = |r: &[f64], z: &mut [f64]| match &pivots {
        Some(d) => sys.ic0_solve(d, r, z),
        None => z.iter_mut().zip(r).zip(&sys.diag).for_each(|((z, r), d)| *z = r / d),
    };

    let n = b.len();
    let mut x = b.clone();
    let mut ax = vec![0.0; n];
    sys.apply(&x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let mut rel = dot(&r, &r).sqrt() / b_norm;
    if rel <= params.cg_tol {
        return Ok(map.to_owned());
    }
    let mut z = vec![0.0; n];
    precondition(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for _ in 0..params.cg_max_iter {
        sys.apply(&p, &mut ap);
        let step = rz / dot(&p, &ap);
        for i in 0..n {
            x[i] += step * p[i];
            r[i] -= step * ap[i];
        }
        rel = dot(&r, &r).sqrt() / b_norm;
        if rel <= params.cg_tol {
            return Ok(Array2::from_shape_vec((h, w), x).expect("shape matches"));
        }
        precondition(&r, &mut z);
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::NoConvergence {
        iterations: params.cg_max_iter,
        residual: rel,
    })
}

/// Per-pixel argmin over layers, ties to the lowest class id.
pub fn decide_from_cube(cube: &ResidualCube) -> LabelMap {
    let (h, w) = (cube.height(), cube.width());
    let labels = (0..h * w)
        .map(|i| {
            let lane = cube.data.slice(ndarray::s![i / w, i % w, ..]).to_vec();
            argmin(&lane) + 1
        })
        .collect();
    LabelMap::new(h, w, labels).expect("dimensions match")
}

/// Residual-map smoothing applied before the final decision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Smoothing {
    None,
    Box { window: usize },
    Wls(WlsParams),
}

impl Smoothing {
    pub const DEFAULT_BOX_WINDOW: usize = 5;
}

/// Smooths every layer in parallel. WLS uses `guidance`, which must be given.
pub fn smooth_cube(cube: &ResidualCube, smoothing: &Smoothing, guidance: Option<ArrayView2<'_, f64>>) -> Result<ResidualCube> {
    let layers: Vec<Array2<f64>> = match smoothing {
        Smoothing::None => return Ok(cube.clone()),
        Smoothing::Box { window } => (1..=cube.num_classes())
            .into_par_iter()
            .map(|k| box_smooth(cube.layer(k), *window))
            .collect::<Result<_>>()?,
        Smoothing::Wls(p) => {
            let g = guidance.ok_or_else(|| Error::InvalidParam("WLS smoothing needs a guidance image".into()))?;
            (1..=cube.num_classes())
                .into_par_iter()
                .map(|k| wls_smooth(cube.layer(k), g, p))
                .collect::<Result<_>>()?
        }
    };
    // averaging keeps values in [0, 1]; WLS can overshoot by rounding
    let mut out = ResidualCube::from_layers(layers, cube.normalized);
    if out.normalized {
        out.data.mapv_inplace(|v| v.clamp(0.0, 1.0));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneOptions {
    pub normalization: CubeNormalization,
    pub mask: bool,
    pub smoothing: Smoothing,
}

impl Default for SceneOptions {
    fn default() -> Self {
        Self {
            normalization: CubeNormalization::Global,
            mask: true,
            smoothing: Smoothing::Wls(WlsParams::default()),
        }
    }
}

/// Class maps of a scene. Labels are the dictionary's original labels.
#[derive(Debug, Clone)]
pub struct SceneResult {
    pub pixelwise: LabelMap,
    pub smoothed: LabelMap,
    pub residuals: ResidualCube,
}

fn to_original(map: &LabelMap, dict: &Dictionary) -> Result<LabelMap> {
    let labels = map
        .labels()
        .iter()
        .map(|&k| {
            dict.original_label(k)
                .and_then(|l| usize::try_from(l).ok())
                .ok_or(Error::InvalidLabel { index: k, label: k as i64 })
        })
        .collect::<Result<_>>()?;
    LabelMap::new(map.height(), map.width(), labels)
}

/// Residual cube, optional class-map masking, smoothing and final decision.
/// The guidance image is the first principal component of the raw cube.
pub fn classify_scene(
    cube: &HsiCube,
    dict: &Dictionary,
    classifier: &PixelClassifier,
    options: &SceneOptions,
) -> Result<SceneResult> {
    let (residuals, pixelwise) = build_residual_cube(cube, dict, classifier, options.normalization)?;
    let staged = if options.mask {
        mask_by_classmap(&residuals, &pixelwise)?
    } else {
        residuals.clone()
    };
    let guidance = match options.smoothing {
        Smoothing::Wls(_) => Some(pca_first_component(cube)?),
        _ => None,
    };
    let smoothed = smooth_cube(&staged, &options.smoothing, guidance.as_ref().map(|g| g.view()))?;
    let decided = decide_from_cube(&smoothed);
    Ok(SceneResult {
        pixelwise: to_original(&pixelwise, dict)?,
        smoothed: to_original(&decided, dict)?,
        residuals,
    })
}
